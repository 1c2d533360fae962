import os

import numpy as np

from fixnet.cli import main
from fixnet.diagnostics import read_plot_series, read_summary, read_trace
from fixnet.graph import read_graph_sequence

BASE = """\
[run]
engine = "dikm"
max_iters = 400
stop_tolerance = 1e-9
master_seed = 7

[scenario]
preset = "feasibility-2halfspace"

[scenario.errors]
kind = "geometric"
scale = 0.05
ratio = 0.9
"""


def write_cfg(tmp_path, text, name="exp.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestRunCommand:
    def test_successful_run_emits_artifacts(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE)
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == 0
        trace = read_trace(out / "trace.tsv")
        assert trace.n_agents == 2
        assert trace.stop_reason in ("converged", "budget")
        summary = read_summary(out / "summary.json")
        assert summary["engine"] == "dikm"
        assert summary["master_seed"] == 7
        for plot in ("plot_residual.tsv", "plot_consensus.tsv", "plot_dsq.tsv"):
            read_plot_series(out / plot)

    def test_default_preset_run_converges(self, tmp_path):
        cfg = write_cfg(tmp_path, """\
[run]
engine = "dikm"
master_seed = 1

[scenario]
preset = "feasibility-2halfspace"
""")
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == 0
        assert read_trace(out / "trace.tsv").stop_reason == "converged"

    def test_repetitions_use_distinct_streams(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE.replace('engine = "dikm"', 'engine = "dibkm"')
                        + "\n[scenario.blocks]\nprobs = [0.5, 0.5]\n")
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out), "--quiet",
                     "--repeats", "2", "--iters", "80", "--tol", "0"]) == 0
        t0 = read_trace(out / "trace.tsv")
        t1 = read_trace(out / "trace_rep001.tsv")
        assert not np.array_equal(t0.residuals, t1.residuals)

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE)
        o1, o2 = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", cfg, "--out", str(o1), "--quiet"]) == 0
        assert main(["run", "--config", cfg, "--out", str(o2), "--quiet"]) == 0
        for name in sorted(os.listdir(o1)):
            assert (o1 / name).read_bytes() == (o2 / name).read_bytes()

    def test_flag_overrides_iters_and_seed(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE)
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out), "--quiet",
                     "--iters", "10", "--tol", "0", "--seed", "99"]) == 0
        trace = read_trace(out / "trace.tsv")
        assert trace.iterations == 10
        assert read_summary(out / "summary.json")["master_seed"] == 99

    def test_env_seed_override(self, tmp_path, monkeypatch):
        cfg = write_cfg(tmp_path, BASE)
        out = tmp_path / "out"
        monkeypatch.setenv("FIXNET_SEED", "1234")
        assert main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == 0
        assert read_summary(out / "summary.json")["master_seed"] == 1234
        # explicit flag wins over the environment
        out2 = tmp_path / "out2"
        assert main(["run", "--config", cfg, "--out", str(out2), "--quiet",
                     "--seed", "5"]) == 0
        assert read_summary(out2 / "summary.json")["master_seed"] == 5

    def test_repeat_count_emits_numbered_traces(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE + "\n") + ""
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out), "--quiet",
                     "--repeats", "3", "--iters", "50", "--tol", "0"]) == 0
        assert (out / "trace.tsv").exists()
        assert (out / "trace_rep001.tsv").exists()
        assert (out / "trace_rep002.tsv").exists()

    def test_block_engine_run(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE.replace('engine = "dikm"', 'engine = "dibkm"')
                        + "\n[scenario.blocks]\nprobs = [0.5, 1.0]\n")
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out), "--quiet",
                     "--iters", "60", "--tol", "0"]) == 0
        trace = read_trace(out / "trace.tsv")
        assert trace.engine == "dibkm"
        assert trace.wdist_sq is not None
        assert trace.block_probs == (0.5, 1.0)

    def test_domain_escape_exit_code(self, tmp_path):
        # domain-restricted scenario pushed out of [0, 1) by a huge error
        cfg = write_cfg(tmp_path, """\
[run]
engine = "dikm"
max_iters = 50
stop_tolerance = 0.0
master_seed = 3

[scenario]
preset = "square-clip"

[scenario.errors]
kind = "custom"
magnitudes = [50.0]
""")
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == 4

    def test_divergence_exit_code(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE.replace(
            '[scenario.errors]\nkind = "geometric"\nscale = 0.05\nratio = 0.9',
            '[scenario.errors]\nkind = "custom"\nmagnitudes = [1e13]'))
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == 4
        assert read_trace(out / "trace.tsv").stop_reason == "diverged"


class TestCentralizedEngine:
    def test_km_single_agent_run(self, tmp_path):
        cfg = write_cfg(tmp_path, """\
[run]
engine = "km"
max_iters = 4000
stop_tolerance = 1e-9
master_seed = 6

[scenario]
kind = "feasibility"
dim = 2
sets = [ {kind = "halfspace", a = [1.0, 0.5], b = 0.25} ]

[scenario.errors]
kind = "geometric"
scale = 0.1
ratio = 0.9

[scenario.init]
kind = "uniform-box"
low = 2.0
high = 6.0
""")
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == 0
        trace = read_trace(out / "trace.tsv")
        assert trace.engine == "km"
        assert trace.n_agents == 1
        assert trace.stop_reason == "converged"


class TestConfigErrors:
    def test_syntax_error_exits_2(self, tmp_path):
        cfg = write_cfg(tmp_path, "= not toml at all")
        assert main(["run", "--config", cfg, "--quiet"]) == 2

    def test_unknown_key_exits_2(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE.replace("[run]", "[run]\nbogus = 1"))
        assert main(["run", "--config", cfg, "--quiet"]) == 2

    def test_unknown_preset_exits_2(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE.replace("feasibility-2halfspace", "nope"))
        assert main(["run", "--config", cfg, "--quiet"]) == 2

    def test_unknown_engine_exits_2(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE.replace('"dikm"', '"sgd"'))
        assert main(["run", "--config", cfg, "--quiet"]) == 2

    def test_missing_config_file_exits_2(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "missing.toml"), "--quiet"]) == 2

    def test_unknown_suite_exits_2(self):
        assert main(["suite", "definitely-not-a-suite", "--quiet"]) == 2


class TestValidationErrors:
    def test_relaxation_floor_out_of_range_exits_3(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, BASE + "\n[scenario.relaxation]\nvalue = 0.45\nfloor = 0.6\n")
        assert main(["run", "--config", cfg, "--quiet"]) == 3
        assert "(0, 1/2]" in capsys.readouterr().err

    def test_relaxation_value_outside_band_exits_3(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE + "\n[scenario.relaxation]\nvalue = 0.95\nfloor = 0.2\n")
        assert main(["run", "--config", cfg, "--quiet"]) == 3

    def test_km_needs_single_agent_exits_3(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE.replace('"dikm"', '"km"'))
        assert main(["run", "--config", cfg, "--quiet"]) == 3

    def test_dibkm_needs_blocks_exits_3(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE.replace('"dikm"', '"dibkm"'))
        assert main(["run", "--config", cfg, "--quiet"]) == 3

    def test_graph_size_mismatch_exits_3(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE + "\n[scenario.graph]\nkind = \"static-complete\"\nn_agents = 3\n")
        assert main(["run", "--config", cfg, "--quiet"]) == 3

    def test_failed_graph_assumptions_exit_3(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, BASE + "\n[scenario.graph]\nkind = \"disconnected-pair\"\nsizes = [1, 1]\n")
        assert main(["run", "--config", cfg, "--quiet"]) == 3
        assert "graph-assumptions" in capsys.readouterr().err


class TestVerifyCommand:
    def test_verify_reports_hypotheses(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, BASE)
        assert main(["verify", "--config", cfg]) == 0
        out = capsys.readouterr().out
        assert "graph-assumptions" in out
        assert "regularity-constants" in out
        assert "dikm-rate-condition" in out
        assert "PASS" in out

    def test_verify_square_clip_notes(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, BASE.replace("feasibility-2halfspace", "square-clip"))
        assert main(["verify", "--config", cfg]) == 0
        out = capsys.readouterr().out
        assert "not linearly regular" in out
        assert "power regular" in out

    def test_verify_disconnected_reports_fail(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, BASE + "\n[scenario.graph]\nkind = \"disconnected-pair\"\nsizes = [1, 1]\n")
        assert main(["verify", "--config", cfg]) == 0
        out = capsys.readouterr().out
        assert "FAIL graph-assumptions" in out


class TestInlineScenarios:
    def test_inline_feasibility(self, tmp_path):
        cfg = write_cfg(tmp_path, """\
[run]
engine = "dikm"
max_iters = 200
stop_tolerance = 0.0
master_seed = 3

[scenario]
kind = "feasibility"
dim = 2
interior_point = [0.0, 0.0]
sets = [
  {kind = "halfspace", a = [1.0, 0.0], b = 1.0},
  {kind = "box", lo = [-2.0, -2.0], hi = [2.0, 2.0]},
]
""")
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == 0

    def test_inline_linear_equation(self, tmp_path):
        cfg = write_cfg(tmp_path, """\
[run]
engine = "dikm"
max_iters = 200
stop_tolerance = 0.0
master_seed = 3

[scenario]
kind = "linear-equation"
n_agents = 2
system_A = [[1.0, 0.0], [0.0, 1.0]]
system_b = [0.0, 0.0]
""")
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == 0

    def test_inline_set_unknown_key_exits_2(self, tmp_path):
        cfg = write_cfg(tmp_path, """\
[run]
engine = "dikm"

[scenario]
kind = "feasibility"
dim = 2
sets = [ {kind = "halfspace", a = [1.0, 0.0], b = 1.0, oops = 3} ]
""")
        assert main(["run", "--config", cfg, "--quiet"]) == 2


class TestBlockSizesConfig:
    def test_explicit_block_sizes(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE.replace('engine = "dikm"', 'engine = "dibkm"')
                        .replace('preset = "feasibility-2halfspace"',
                                 'preset = "feasibility-2halfspace"\ndim = 4')
                        + "\n[scenario.blocks]\nprobs = [0.5, 1.0]\nsizes = [2, 2]\n")
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out), "--quiet",
                     "--iters", "60", "--tol", "0"]) == 0
        assert read_trace(out / "trace.tsv").block_sizes == (2, 2)

    def test_bad_block_sizes_exit_3(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE.replace('engine = "dikm"', 'engine = "dibkm"')
                        + "\n[scenario.blocks]\nprobs = [0.5, 1.0]\nsizes = [1, 2]\n")
        assert main(["run", "--config", cfg, "--quiet"]) == 3


class TestExportGraph:
    def test_export_round_trip(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE)
        out = tmp_path / "out"
        assert main(["export-graph", "--config", cfg, "--count", "6",
                     "--out", str(out), "--quiet"]) == 0
        records = read_graph_sequence(out / "graphs.tsv")
        assert len(records) == 7
        assert all(M.shape == (2, 2) for _, M in records)
        assert all(np.allclose(M.sum(axis=1), 1.0) for _, M in records)


class TestSuiteCommand:
    def test_lemma_suite_passes(self, tmp_path, capsys):
        out = tmp_path / "suite"
        assert main(["suite", "lemmas", "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert "kron-norm-bound" in text
        assert (out / "suite_lemmas.txt").exists()
