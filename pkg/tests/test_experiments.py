import numpy as np
import pytest

from rankenv.experiments import (BiasSummary, ExperimentSetup, RunRecord,
                                 bias_study, desk_setup, noise_sweep,
                                 paper_setup, rank_fit_sweep, read_bias_csv,
                                 read_records_csv, records_to_csv,
                                 setup_by_name, write_bias_csv,
                                 write_plot_data, write_records_csv)
from rankenv.solvers import SolveConfig

FAST = SolveConfig(tol=1e-9, max_iter=4000)

# small setup so unit tests stay quick; the acceptance suite runs desk scale
MINI = ExperimentSetup(m=40, n1=6, n2=6, op_std=1.0 / np.sqrt(40.0), k0=2,
                       seed=20240001)


def test_setups():
    d, p = desk_setup(), paper_setup()
    assert (d.m, d.n1, d.n2, d.k0) == (75, 10, 10, 2)
    assert (p.m, p.n1, p.n2, p.k0) == (300, 20, 20, 4)
    assert p.op_std == pytest.approx(1.0 / np.sqrt(300.0))
    assert setup_by_name("desk") == desk_setup()
    with pytest.raises(ValueError):
        setup_by_name("huge")


def test_rank_fit_sweep_mini():
    records = rank_fit_sweep(MINI, noise_std=0.1, grid_points=12, cfg=FAST,
                             with_verdicts=False)
    assert len(records) == 24
    kinds = {r.reg_kind for r in records}
    assert kinds == {"murank", "nuclear"}
    assert all(r.converged for r in records)
    # large weights drive the rank to zero, small ones toward full fit
    mur = [r for r in records if r.reg_kind == "murank"]
    assert mur[-1].rank == 0
    assert mur[0].rank >= MINI.k0


def test_rank_fit_sweep_noise_free_hits_truth():
    records = rank_fit_sweep(MINI, noise_std=0.0, grid_points=12, cfg=FAST,
                             with_verdicts=False)
    best = min((r for r in records if r.reg_kind == "murank"
                and r.rank == MINI.k0), key=lambda r: r.data_fit)
    assert best.data_fit < 1e-10


def test_noise_sweep_mini():
    records = noise_sweep(MINI, levels=(0.0, 1.0), cfg=FAST)
    assert len(records) == 4
    env = {r.noise_norm: r for r in records if r.reg_kind == "fixedrank"}
    nuc = {r.noise_norm: r for r in records if r.reg_kind == "nuclear"}
    assert env[0.0].data_fit < 1e-8
    for lvl in (0.0, 1.0):
        assert env[lvl].data_fit <= nuc[lvl].data_fit + 1e-12
        assert env[lvl].rank <= MINI.k0
        assert nuc[lvl].rank <= MINI.k0


def test_bias_study_mini():
    summary = bias_study(MINI, n_instances=6, noise_norm=0.5, cfg=FAST)
    assert summary.mean_env.shape == (6, 6)
    assert summary.n_instances == 6
    assert 0.0 <= summary.coverage("env") <= 1.0
    assert summary.mean_abs_bias("nuc") > 0.0


def test_bias_study_noise_free_single_instance():
    summary = bias_study(MINI, n_instances=1, noise_norm=0.0, cfg=FAST)
    assert np.max(np.abs(summary.mean_env)) < 1e-6


def test_records_csv_roundtrip(tmp_path):
    records = rank_fit_sweep(MINI, noise_std=0.1, grid_points=5, cfg=FAST,
                             with_verdicts=False)
    path = tmp_path / "records.csv"
    write_records_csv(records, path)
    back = read_records_csv(path)
    assert back == records


def test_records_csv_empty(tmp_path):
    path = tmp_path / "empty.csv"
    write_records_csv([], path)
    text = path.read_text()
    assert text.splitlines() == [
        "reg_kind,reg_param,noise_norm,seed,rank,data_fit,gt_dist,iters,"
        "converged,verdict"]
    assert read_records_csv(path) == []


def test_experiment_determinism(tmp_path):
    a = records_to_csv(noise_sweep(MINI, levels=(0.0, 0.5), cfg=FAST))
    b = records_to_csv(noise_sweep(MINI, levels=(0.0, 0.5), cfg=FAST))
    assert a == b


def test_bias_csv_roundtrip(tmp_path):
    summary = bias_study(MINI, n_instances=3, noise_norm=0.5, cfg=FAST)
    path = tmp_path / "bias.csv"
    write_bias_csv(summary, path)
    back = read_bias_csv(path)
    np.testing.assert_array_equal(back.mean_env, summary.mean_env)
    np.testing.assert_array_equal(back.sd_nuc, summary.sd_nuc)
    assert path.read_text().splitlines()[0] == \
        "row,col,mean_env,sd_env,mean_nuc,sd_nuc"


def test_plot_data_files(tmp_path):
    records = noise_sweep(MINI, levels=(0.0, 1.0), cfg=FAST)
    noise_path = tmp_path / "curves_noise.csv"
    write_plot_data(records, noise_path, x="noise")
    lines = noise_path.read_text().splitlines()
    assert lines[0] == "noise_norm,fit_fixedrank,dist_fixedrank,fit_nuclear,dist_nuclear"
    assert len(lines) == 3

    records2 = rank_fit_sweep(MINI, noise_std=0.1, grid_points=5, cfg=FAST,
                              with_verdicts=False)
    rank_path = tmp_path / "curves_rank.csv"
    write_plot_data(records2, rank_path, x="rank")
    lines2 = rank_path.read_text().splitlines()
    assert lines2[0] == "rank,fit_murank,fit_nuclear"
    with pytest.raises(ValueError):
        write_plot_data(records2, tmp_path / "x.csv", x="zigzag")


def test_figures_render(tmp_path):
    from rankenv.figures import plot_bias, plot_noise_sweep, plot_rank_vs_fit

    records = noise_sweep(MINI, levels=(0.0, 1.0), cfg=FAST)
    p1 = tmp_path / "noise.png"
    plot_noise_sweep(records, p1)
    assert p1.stat().st_size > 1000

    records2 = rank_fit_sweep(MINI, noise_std=0.1, grid_points=5, cfg=FAST,
                              with_verdicts=False)
    p2 = tmp_path / "rank.png"
    plot_rank_vs_fit(records2, p2)
    assert p2.stat().st_size > 1000

    summary = bias_study(MINI, n_instances=3, noise_norm=0.5, cfg=FAST)
    p3 = tmp_path / "bias.png"
    plot_bias(summary, p3)
    assert p3.stat().st_size > 1000
