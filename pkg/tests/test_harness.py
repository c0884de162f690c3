import json
import math
import os

import numpy as np
import pytest

from diffnet.harness import (
    ExperimentConfig,
    lambda_sqrt_rule,
    power_pair,
    resolve_threads,
    run_coverage,
    run_experiment,
    run_power_global,
    run_power_single,
    run_type1_global,
    select_lambda_grid_jump,
    thinning_diagnostic,
    write_report,
)
from diffnet.ising import make_pair, sample_exact
from diffnet.kliep import KliepProblem
from diffnet.model import edge_to_index, ising_suff_stats


class TestLambdaRules:
    def test_sqrt_rule_paper_values(self):
        assert lambda_sqrt_rule(300, 300, math.sqrt(2)) == pytest.approx(0.195, abs=5e-4)
        assert lambda_sqrt_rule(1225, 600, math.sqrt(2)) == pytest.approx(0.154, abs=5e-4)

    def test_sqrt_rule_zero_multiplier(self):
        assert lambda_sqrt_rule(100, 50, 0.0) == 0.0

    def test_grid_jump_on_constructed_instance(self):
        """One strong change and several weak ones: the support-size path
        computed by a dense-grid homotopy shows where the second batch of
        edges enters, and the rule must stop right before that point."""
        pair = make_pair("chain1", 10, seed=3)
        x = sample_exact(pair.gamma_x, 400, seed=1)
        y = sample_exact(pair.gamma_y, 800, seed=2)
        problem = KliepProblem(ising_suff_stats(x), ising_suff_stats(y))
        grid = list(np.geomspace(1.2, 0.02, 25))
        lam, info = select_lambda_grid_jump(problem, grid, jump_factor=2.0)
        assert info["jumped"]
        sizes = info["sizes"]
        j = len(sizes) - 1
        assert sizes[j] > 2.0 * max(sizes[j - 1], 1) or sizes[j] > 400
        assert lam == grid[j - 1]

    def test_grid_jump_no_jump_flag(self, rng):
        psi = rng.choice([-1.0, 1.0], size=(60, 6))
        problem = KliepProblem(psi, psi)  # identical samples: support stays 0
        lam, info = select_lambda_grid_jump(problem, [1.0, 0.5, 0.25])
        assert not info["jumped"]
        assert lam == 0.25

    def test_grid_must_decrease(self, rng):
        psi = rng.choice([-1.0, 1.0], size=(30, 6))
        problem = KliepProblem(psi, psi)
        with pytest.raises(ValueError):
            select_lambda_grid_jump(problem, [0.5, 0.5])


class TestConfig:
    def test_json_round_trip(self, tmp_path):
        cfg = ExperimentConfig(experiment="coverage", reps=5, seed=9)
        path = tmp_path / "cfg.json"
        from dataclasses import asdict

        path.write_text(json.dumps(asdict(cfg)))
        loaded = ExperimentConfig.from_json(path)
        assert loaded == cfg

    def test_paper_scale_switches_gibbs_defaults(self):
        desk = ExperimentConfig()
        paper = ExperimentConfig(paper_scale=True)
        assert (desk.gibbs_burnin, desk.gibbs_thinning) == (500, 50)
        assert (paper.gibbs_burnin, paper.gibbs_thinning) == (3000, 1000)
        explicit = ExperimentConfig(burnin=42, thinning=7, paper_scale=True)
        assert (explicit.gibbs_burnin, explicit.gibbs_thinning) == (42, 7)

    def test_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(experiment="nope")
        with pytest.raises(ValueError):
            ExperimentConfig(reps=0)
        with pytest.raises(ValueError):
            ExperimentConfig(lambda_rule="guess")

    def test_threads_resolution(self, monkeypatch):
        assert resolve_threads(3) == 3
        monkeypatch.setenv("DIFFNET_THREADS", "5")
        assert resolve_threads(0) == 5
        monkeypatch.delenv("DIFFNET_THREADS")
        assert resolve_threads(0) >= 1


class TestPowerPair:
    def test_delta_lands_on_target_edge(self):
        for setting in ("none", "weak", "strong", "mixed"):
            pair = power_pair(setting, 0.3, 10, seed=0)
            k = edge_to_index(5, 6, 10) - 1
            assert pair.theta_star[k] == pytest.approx(0.3)

    def test_difference_supports(self):
        e = lambda u, v: edge_to_index(u, v, 10) - 1
        none = power_pair("none", 0.1, 10)
        assert set(none.support_star) == {e(5, 6)}
        weak = power_pair("weak", 0.1, 10)
        assert set(weak.support_star) == {e(5, 6), e(4, 6), e(5, 7)}
        strong = power_pair("strong", 0.1, 10)
        assert set(strong.support_star) == {e(5, 6), e(4, 5), e(6, 7)}
        mixed = power_pair("mixed", 0.1, 10)
        assert set(mixed.support_star) == {e(5, 6), e(4, 5), e(6, 7),
                                           e(4, 6), e(5, 7)}
        assert mixed.theta_star[e(4, 5)] == pytest.approx(0.4)
        assert mixed.theta_star[e(4, 6)] == pytest.approx(0.2)

    def test_zero_delta_matches_null(self):
        pair = power_pair("none", 0.0, 10)
        assert pair.support_star.size == 0


def tiny_coverage_config(**kw):
    base = dict(experiment="coverage", pair="chain1", m=10, n_x=40, n_y=80,
                reps=4, seed=5, threads=1, alphas=(0.05,),
                methods=("naive", "sparklie1"))
    base.update(kw)
    return ExperimentConfig(**base)


class TestRunners:
    def test_coverage_single_rep_degenerate(self):
        cfg = tiny_coverage_config(reps=1)
        report = run_coverage(cfg)
        row = report.summary[0]
        assert row["coverage_0.05"] in (0.0, 1.0)
        assert row["se_0.05"] == 0.0

    def test_coverage_report_shape(self):
        cfg = tiny_coverage_config()
        report = run_coverage(cfg)
        assert len(report.records) == 4 * 2
        assert {r["method"] for r in report.records} == {"naive", "sparklie1"}
        for row in report.records:
            assert row["seed"].startswith("5:")
        assert len(report.qq) == 8

    def test_aggregates_recomputable_from_records(self):
        cfg = tiny_coverage_config(reps=6)
        report = run_coverage(cfg)
        for row in report.summary:
            rows = [r for r in report.records if r["method"] == row["method"]]
            assert row["coverage_0.05"] == pytest.approx(
                np.mean([r["covered_0.05"] for r in rows])
            )

    def test_power_single_shape(self):
        cfg = ExperimentConfig(
            experiment="power_single", m=10, n_x=30, n_y=60, reps=2,
            deltas=(0.0, 0.75), nuisance=("none",), seed=2, threads=1,
            methods=("sparklie1",),
        )
        report = run_power_single(cfg)
        assert len(report.records) == 4
        assert len(report.summary) == 2
        for row in report.summary:
            assert 0.0 <= row["power_0.05"] <= 1.0

    def test_type1_and_power_global_shapes(self):
        cfg = ExperimentConfig(
            experiment="type1_global", pair="positive", m=10, n_x=60, n_y=60,
            reps=2, n_b=12, seed=4, threads=1, alphas=(0.1, 0.05),
        )
        report = run_type1_global(cfg)
        assert len(report.records) == 2
        kinds = {row["kind"] for row in report.summary}
        assert kinds == {"T", "W"}
        for r in report.records:
            # nested rejection regions: rejecting at 5% implies at 10%
            for kind in ("T", "W"):
                assert r[f"reject_{kind}_0.05"] <= r[f"reject_{kind}_0.1"]

        cfg2 = ExperimentConfig(
            experiment="power_global", pair="positive", m=10, n_x=60, n_y=60,
            reps=2, n_b=12, seed=4, threads=1, s_thetas=(0, 2),
            signal_levels=(0.4,), alphas=(0.05,),
        )
        report2 = run_power_global(cfg2)
        assert len(report2.records) == 4
        assert {r["s_theta"] for r in report2.records} == {0, 2}

    def test_run_experiment_dispatch(self):
        cfg = tiny_coverage_config(reps=2)
        report = run_experiment(cfg)
        assert report.config is cfg


class TestDeterminism:
    def test_thread_count_invariance(self, tmp_path):
        """Byte-identical CSV reports regardless of worker count."""
        out = {}
        for threads in (1, 2):
            cfg = tiny_coverage_config(reps=6, threads=threads)
            report = run_coverage(cfg)
            outdir = tmp_path / f"t{threads}"
            write_report(report, outdir)
            out[threads] = {
                name: (outdir / name).read_bytes()
                for name in ("records.csv", "summary.csv", "qq.csv")
            }
        assert out[1] == out[2]

    def test_rerun_identical(self, tmp_path):
        cfg = ExperimentConfig(
            experiment="type1_global", pair="positive", m=10, n_x=50, n_y=50,
            reps=3, n_b=10, seed=8, threads=1,
        )
        a = run_type1_global(cfg)
        b = run_type1_global(cfg)
        assert a.records == b.records

    def test_rep_replay_via_recorded_seed(self):
        cfg = tiny_coverage_config(reps=5)
        report = run_coverage(cfg)
        target = [r for r in report.records if r["rep"] == 3]
        from diffnet.harness import _coverage_rep

        lam = report.notes["lambda_theta"]
        replay = _coverage_rep((cfg, 3, lam))
        assert [r for r in replay] == target


class TestEmission:
    def test_written_files_and_json(self, tmp_path):
        cfg = tiny_coverage_config(reps=2)
        report = run_coverage(cfg)
        write_report(report, tmp_path / "out")
        names = sorted(os.listdir(tmp_path / "out"))
        assert names == ["qq.csv", "records.csv", "summary.csv", "summary.json"]
        doc = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert doc["config"]["experiment"] == "coverage"
        assert "wall_clock_seconds" in doc
        header = (tmp_path / "out" / "records.csv").read_text().splitlines()[0]
        assert header.split(",")[:3] == ["rep", "seed", "method"]


def test_thinning_diagnostic_iid_small(rng):
    samples = rng.choice([-1.0, 1.0], size=(400, 5))
    assert abs(thinning_diagnostic(samples)) < 0.2


class TestPowerBehaviour:
    """Desk-scale behavioural checks of the two power experiments."""

    def test_single_edge_power_curve(self):
        cfg = ExperimentConfig(
            experiment="power_single", m=10, n_x=150, n_y=300, reps=40,
            deltas=(0.0, 0.75), nuisance=("none",), seed=14, threads=1,
            methods=("sparklie1",), alphas=(0.05,),
        )
        report = run_power_single(cfg)
        power = {row["delta"]: row["power_0.05"] for row in report.summary}
        se = math.sqrt(0.05 * 0.95 / 40)
        # size at the null within 2 SE of nominal (conservative is fine)
        assert power[0.0] <= 0.05 + 2 * se
        # strong signal saturates
        assert power[0.75] >= 0.9

    def test_global_power_rises_with_signal(self):
        cfg = ExperimentConfig(
            experiment="power_global", pair="positive", m=10, n_x=150,
            n_y=150, reps=25, n_b=80, seed=21, threads=1,
            s_thetas=(3,), signal_levels=(0.0, 0.5), alphas=(0.05,),
            sketch_kinds=("T",),
        )
        report = run_power_global(cfg)
        power = {row["level"]: row["power_0.05"] for row in report.summary}
        se = math.sqrt(0.25 / 25)
        assert power[0.5] >= power[0.0] - 2 * se
        assert power[0.5] >= 0.8  # three ~0.5 changes are easy to detect
