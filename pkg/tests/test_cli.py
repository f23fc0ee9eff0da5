"""End-to-end command-line tests, run in process via cli.main()."""

import dataclasses
import json

import numpy as np
import pytest

import twinforge.harness as hx
import twinforge.neural as nn
import twinforge.twin_tuner as tt
from twinforge import cli

MICRO = """
[env]
n_users = 2
m_uavs = 2
horizon_t = 3

[train]
episodes = 4
batch = 4
buffer_capacity = 32
eval_every = 2
eval_episodes = 1
hidden_dims = 8

[tuner]
deltas = 0.0,0.5
ks = 0,2
seeds_per_cell = 1
steps = 20
restarts = 1

[scheme]
name = fixed_dt
fixed_k = 0
fixed_delta = 0.5

[run]
seeds = 0,1
schemes = physical_only,fixed_dt,tuned_dt
"""


@pytest.fixture()
def micro_cfg(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text(MICRO)
    return str(p)


class TestSweepVerb:
    def test_happy_path_writes_artifacts(self, micro_cfg, tmp_path, capsys):
        out = tmp_path / "out"
        rc = cli.main(["sweep", "--config", micro_cfg, "--out", str(out)])
        assert rc == 0
        for name in ("utility.csv", "convergence.csv", "surface.csv",
                     "resolved.cfg", "manifest.json", "convergence.svg"):
            assert (out / name).exists(), name
        rows = hx.load_utility_csv(out / "utility.csv")
        assert len(rows) == 6  # 3 schemes x 2 seeds
        assert all(r.status == "ok" for r in rows)
        assert f"wrote {out}: 6 rows, 0 failed" in capsys.readouterr().out

    def test_relative_out_lands_under_env_root(self, micro_cfg, tmp_path,
                                               monkeypatch):
        monkeypatch.setenv("TWINFORGE_OUT", str(tmp_path))
        rc = cli.main(["sweep", "--config", micro_cfg, "--out", "results"])
        assert rc == 0
        assert (tmp_path / "results" / "utility.csv").exists()

    def test_default_out_dir_is_named_for_verb(self, micro_cfg, tmp_path,
                                               monkeypatch):
        monkeypatch.setenv("TWINFORGE_OUT", str(tmp_path))
        assert cli.main(["sweep", "--config", micro_cfg]) == 0
        assert (tmp_path / "twinforge_sweep" / "utility.csv").exists()

    def test_seed_override_narrows_rows(self, micro_cfg, tmp_path):
        out = tmp_path / "out"
        rc = cli.main(["sweep", "--config", micro_cfg, "--out", str(out),
                       "--seeds", "1"])
        assert rc == 0
        rows = hx.load_utility_csv(out / "utility.csv")
        assert [r.seed for r in rows] == [1, 1, 1]

    def test_noise_variant_flag_lands_in_resolved_config(self, micro_cfg, tmp_path):
        out = tmp_path / "out"
        rc = cli.main(["sweep", "--config", micro_cfg, "--out", str(out),
                       "--noise-counts-physical"])
        assert rc == 0
        resolved = hx.parse_config(out / "resolved.cfg")
        assert resolved.run.noise_counts_physical is True
        assert resolved.run.undiscounted_td is False

    def test_failed_rows_exit_1(self, micro_cfg, tmp_path, monkeypatch):
        orig = hx.run_scheme

        def sabotage(cfg, scheme_id, seed, *a, **kw):
            row, training = orig(cfg, scheme_id, seed, *a, **kw)
            if scheme_id == "fixed_dt":
                row = dataclasses.replace(row, status="failed: synthetic")
            return row, training

        monkeypatch.setattr(hx, "run_scheme", sabotage)
        rc = cli.main(["sweep", "--config", micro_cfg,
                       "--out", str(tmp_path / "out")])
        assert rc == 1


class TestErrorExits:
    def test_config_parse_error_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[bogus]\n")
        rc = cli.main(["sweep", "--config", str(bad),
                       "--out", str(tmp_path / "out")])
        assert rc == 2
        err = capsys.readouterr().err
        assert "config error" in err and "unknown section" in err

    def test_missing_config_exit_2(self, tmp_path, capsys):
        rc = cli.main(["sweep", "--config", str(tmp_path / "nope.cfg"),
                       "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "missing file" in capsys.readouterr().err


class TestTrainEvaluate:
    def test_train_saves_policy_snapshots(self, micro_cfg, tmp_path, capsys):
        out = tmp_path / "out"
        rc = cli.main(["train", "--config", micro_cfg, "--out", str(out)])
        assert rc == 0
        # [scheme] selects fixed_dt only; [run] schemes are ignored here.
        rows = hx.load_utility_csv(out / "utility.csv")
        assert {r.scheme for r in rows} == {"fixed_dt"}
        for seed in (0, 1):
            net = nn.load_network(out / f"policy_seed{seed}.net")
            assert net.layer_dims[0] == 8  # 2*(n_users + m_uavs)
        stdout = capsys.readouterr().out
        assert "fixed_dt seed=0 status=ok" in stdout

    def test_train_seed_override(self, micro_cfg, tmp_path):
        out = tmp_path / "out"
        rc = cli.main(["train", "--config", micro_cfg, "--out", str(out),
                       "--seeds", "3"])
        assert rc == 0
        assert (out / "policy_seed3.net").exists()
        assert not (out / "policy_seed0.net").exists()

    def test_evaluate_roundtrip_matches_train_row(self, micro_cfg, tmp_path,
                                                  capsys):
        out = tmp_path / "out"
        assert cli.main(["train", "--config", micro_cfg,
                         "--out", str(out)]) == 0
        trained = {r.seed: r.mean_sum_rate
                   for r in hx.load_utility_csv(out / "utility.csv")}
        capsys.readouterr()
        rc = cli.main(["evaluate", "--config", micro_cfg,
                       "--snapshot", str(out / "policy_seed1.net"),
                       "--seed", "1", "--out", str(tmp_path / "ev")])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert f"seed=1 eval_sum_rate={trained[1]!r}" in stdout
        text = (tmp_path / "ev" / "evaluation.csv").read_text()
        assert text == f"seed,eval_sum_rate\n1,{trained[1]!r}\n"

    def test_evaluate_dim_mismatch_exit_2(self, micro_cfg, tmp_path, capsys):
        out = tmp_path / "out"
        assert cli.main(["train", "--config", micro_cfg,
                         "--out", str(out)]) == 0
        other = tmp_path / "wider.cfg"
        other.write_text(MICRO.replace("n_users = 2", "n_users = 3"))
        rc = cli.main(["evaluate", "--config", str(other),
                       "--snapshot", str(out / "policy_seed0.net")])
        assert rc == 2
        assert "expects input dim 8" in capsys.readouterr().err


class TestSurfaceTune:
    def test_surface_writes_grid_csv(self, micro_cfg, tmp_path, capsys):
        out = tmp_path / "out"
        rc = cli.main(["surface", "--config", micro_cfg, "--out", str(out)])
        assert rc == 0
        surf = tt.load_surface(out / "surface.csv")
        assert surf.mean_rate.shape == (2, 2)
        assert np.all(surf.seeds == 1)
        assert "4 cells, 0 invalid" in capsys.readouterr().out

    def test_surface_invalid_cells_exit_1(self, micro_cfg, tmp_path,
                                          monkeypatch):
        holed = tt.PerformanceSurface(
            deltas=np.array([0.0, 0.5]), ks=np.array([0.0, 2.0]),
            mean_rate=np.array([[1.0, np.nan], [1.0, 1.0]]),
            std_err=np.zeros((2, 2)),
            seeds=np.array([[1, 0], [1, 1]]))
        monkeypatch.setattr(hx, "ensure_surface", lambda cfg, **kw: holed)
        rc = cli.main(["surface", "--config", micro_cfg,
                       "--out", str(tmp_path / "out")])
        assert rc == 1

    def test_tune_writes_plan_and_tuner_net(self, micro_cfg, tmp_path):
        out = tmp_path / "out"
        rc = cli.main(["tune", "--config", micro_cfg, "--out", str(out)])
        assert rc == 0
        plan = json.loads((out / "plan.json").read_text())
        assert set(plan) == {"physical_k", "twin_noise_delta", "total_uavs_m",
                             "estimated_utility"}
        assert plan["total_uavs_m"] == 2
        assert 0 <= plan["physical_k"] <= 2
        assert plan["twin_noise_delta"] >= 0.0
        nn.load_network(out / "tuner.net")  # parses => well-formed
        assert (out / "surface.csv").exists()  # built fresh, so persisted

    def test_tune_reuses_persisted_surface(self, micro_cfg, tmp_path):
        sdir = tmp_path / "s"
        assert cli.main(["surface", "--config", micro_cfg,
                         "--out", str(sdir)]) == 0
        out = tmp_path / "out"
        rc = cli.main(["tune", "--config", micro_cfg, "--out", str(out),
                       "--surface", str(sdir / "surface.csv")])
        assert rc == 0
        assert (out / "plan.json").exists()
        # reused surfaces are not re-persisted into the tune directory
        assert not (out / "surface.csv").exists()


class TestReportVerb:
    def test_rerenders_charts_from_csvs(self, micro_cfg, tmp_path, capsys):
        out = tmp_path / "out"
        assert cli.main(["sweep", "--config", micro_cfg,
                         "--out", str(out)]) == 0
        (out / "convergence.svg").unlink()
        capsys.readouterr()
        rc = cli.main(["report", str(out)])
        assert rc == 0
        assert (out / "convergence.svg").exists()
        # no sweep axis in MICRO, so no utility chart
        assert not (out / "utility_vs_sweep.svg").exists()
        assert "convergence.svg" in capsys.readouterr().out

    def test_out_redirect(self, micro_cfg, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["sweep", "--config", micro_cfg,
                         "--out", str(out)]) == 0
        dest = tmp_path / "charts"
        assert cli.main(["report", str(out), "--out", str(dest)]) == 0
        assert (dest / "convergence.svg").exists()
        assert (out / "convergence.svg").exists()  # source untouched

    def test_empty_source_exit_2(self, tmp_path, capsys):
        src = tmp_path / "empty"
        src.mkdir()
        rc = cli.main(["report", str(src)])
        assert rc == 2
        assert "nothing to render" in capsys.readouterr().err
