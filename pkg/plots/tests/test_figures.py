import json
from pathlib import Path

import pytest

import trajplots.figures as figures
from trajplots import FigureSpec, load_style, render
from trajplots.cli import main

FIXTURES = Path(__file__).resolve().parent / "fixtures"
EXPORT = FIXTURES / "export"


@pytest.fixture
def capture_fig(monkeypatch):
    """Capture the matplotlib figure instead of writing the file."""
    captured = {}

    def fake_save(fig, spec):
        captured["fig"] = fig
        captured["spec"] = spec
        return spec.out

    monkeypatch.setattr(figures, "_save", fake_save)
    return captured


def spec_for(kind, table, out, **kw):
    return FigureSpec(kind=kind, table=Path(table), out=Path(out), **kw)


def write_perf_csv(path, n_challenges=2, n_steps=5, model="m", with_ppl=True):
    lines = ["model_id,step,dev_perplexity,challenge_uid,field,linguistics_term,accuracy"]
    for c in range(n_challenges):
        for i in range(n_steps):
            ppl = repr(20.0 / (i + 1)) if with_ppl else ""
            lines.append(f"{model},{(i + 1) * 10},{ppl},ch{c},f{c % 2},t{c},{0.4 + 0.1 * i}")
    path.write_text("\n".join(lines) + "\n")
    return path


class TestTrajectories:
    def test_two_challenges_five_steps_two_polylines(self, tmp_path, capture_fig):
        table = write_perf_csv(tmp_path / "perf.csv")
        figures.render_trajectories(spec_for("trajectories", table, tmp_path / "o.png"))
        ax = capture_fig["fig"].axes[0]
        # the 0.5-chance axhline also lives in ax.lines; data lines have 5 vertices
        data_lines = [l for l in ax.lines if len(l.get_xdata()) == 5]
        assert len(data_lines) == 2

    def test_perplexity_axis_without_column_errors(self, tmp_path):
        table = write_perf_csv(tmp_path / "perf.csv", with_ppl=False)
        spec = spec_for("trajectories", table, tmp_path / "o.png", x_axis="perplexity")
        with pytest.raises(ValueError, match="dev_perplexity"):
            figures.render_trajectories(spec)

    def test_perplexity_axis_descends(self, tmp_path, capture_fig):
        table = write_perf_csv(tmp_path / "perf.csv")
        figures.render_trajectories(
            spec_for("trajectories", table, tmp_path / "o.png", x_axis="perplexity")
        )
        ax = capture_fig["fig"].axes[0]
        assert ax.get_xscale() == "log"
        lo, hi = ax.get_xlim()
        assert lo > hi  # inverted: training progress runs left to right

    def test_empty_table_errors(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("model_id,step,dev_perplexity,challenge_uid,field,linguistics_term,accuracy\n")
        with pytest.raises(ValueError, match="empty table"):
            figures.render_trajectories(spec_for("trajectories", p, tmp_path / "o.png"))


class TestCorrelationCurves:
    def write_corr(self, path, refs=("1gram",), with_manifest=True):
        lines = ["method,label_a,label_b,step,r"]
        for ref in refs:
            for i in range(5):
                lines.append(f"pearson,m,{ref},{(i + 1) * 10},{repr(0.1 * i)}")
        path.write_text("\n".join(lines) + "\n")
        if with_manifest:
            ann = {
                f"m:{ref}": {
                    "model_id": "m",
                    "reference": ref,
                    "argmax_step": 50,
                    "matched_performance_step": 30,
                    "ref_mean_accuracy": 0.62,
                }
                for ref in refs
            }
            (path.parent / "figures_manifest.json").write_text(
                json.dumps({"tables": {"correlations": {"annotations": ann}}})
            )
        return path

    def test_single_reference_one_curve_one_annotation(self, tmp_path, capture_fig):
        table = self.write_corr(tmp_path / "corr.csv")
        figures.render_correlation_curves(spec_for("correlation_curves", table, tmp_path / "o.png"))
        ax = capture_fig["fig"].axes[0]
        curves = [l for l in ax.lines if len(l.get_xdata()) == 5]
        assert len(curves) == 1
        assert len(ax.texts) == 1
        assert ax.texts[0].get_text() == "0.62"

    def test_two_references_two_curves(self, tmp_path, capture_fig):
        table = self.write_corr(tmp_path / "corr.csv", refs=("1gram", "2gram"))
        figures.render_correlation_curves(spec_for("correlation_curves", table, tmp_path / "o.png"))
        ax = capture_fig["fig"].axes[0]
        assert len([l for l in ax.lines if len(l.get_xdata()) == 5]) == 2
        assert {t.get_text() for t in ax.legend_.get_texts()} == {"m vs 1gram", "m vs 2gram"}

    def test_missing_annotations_warns_but_renders(self, tmp_path, capture_fig):
        table = self.write_corr(tmp_path / "corr.csv", with_manifest=False)
        with pytest.warns(UserWarning, match="metadata missing"):
            figures.render_correlation_curves(
                spec_for("correlation_curves", table, tmp_path / "o.png")
            )
        assert len(capture_fig["fig"].axes[0].texts) == 0


class TestClusterPanels:
    def write_tables(self, d, k=2, orphan=False):
        perf = write_perf_csv(d / "performance.csv", n_challenges=4)
        lines = ["challenge_uid,field,linguistics_term,cluster_id"]
        for c in range(4):
            lines.append(f"ch{c},f{c % 2},t{c},{c % k}")
        if orphan:
            lines.append(f"ghost,f0,t0,0")
        clusters = d / "clusters.csv"
        clusters.write_text("\n".join(lines) + "\n")
        return clusters, perf

    def test_k2_two_subplots(self, tmp_path, capture_fig):
        clusters, perf = self.write_tables(tmp_path, k=2)
        figures.render_cluster_panels(
            spec_for("cluster_panels", clusters, tmp_path / "o.png",
                     group_by="cluster_id", trajectory_table=perf)
        )
        visible = [ax for ax in capture_fig["fig"].axes if ax.get_visible()]
        assert len(visible) == 2

    def test_single_curve_cluster(self, tmp_path, capture_fig):
        clusters, perf = self.write_tables(tmp_path, k=4)  # one challenge per cluster
        figures.render_cluster_panels(
            spec_for("cluster_panels", clusters, tmp_path / "o.png",
                     group_by="cluster_id", trajectory_table=perf)
        )
        visible = [ax for ax in capture_fig["fig"].axes if ax.get_visible()]
        assert len(visible) == 4
        for ax in visible:
            assert len([l for l in ax.lines if len(l.get_xdata()) == 5]) == 1

    def test_join_failure_lists_orphans(self, tmp_path):
        clusters, perf = self.write_tables(tmp_path, orphan=True)
        with pytest.raises(ValueError, match="missing from trajectory table: ghost"):
            figures.render_cluster_panels(
                spec_for("cluster_panels", clusters, tmp_path / "o.png",
                         group_by="cluster_id", trajectory_table=perf)
            )

    def test_default_trajectory_table_lookup(self, tmp_path, capture_fig):
        clusters, _ = self.write_tables(tmp_path)
        figures.render_cluster_panels(
            spec_for("cluster_panels", clusters, tmp_path / "o.png", group_by="cluster_id")
        )
        assert capture_fig["fig"] is not None


class TestSpecAndDeterminism:
    def test_spec_validation(self, tmp_path):
        with pytest.raises(ValueError, match="kind"):
            FigureSpec(kind="pie", table=Path("x"), out=Path("y"))
        with pytest.raises(ValueError, match="x_axis"):
            FigureSpec(kind="trajectories", table=Path("x"), out=Path("y"), x_axis="time")
        with pytest.raises(ValueError, match="unknown figure spec keys"):
            FigureSpec.from_dict(
                {"kind": "trajectories", "table": "t.csv", "color": "red"}, tmp_path, tmp_path
            )

    def test_repeated_renders_byte_identical(self, tmp_path):
        table = write_perf_csv(tmp_path / "perf.csv")
        a = figures.render_trajectories(spec_for("trajectories", table, tmp_path / "a.png"))
        b = figures.render_trajectories(spec_for("trajectories", table, tmp_path / "b.png"))
        assert a.read_bytes() == b.read_bytes()

    def test_reads_only_exported_tables(self):
        # fixture renders work straight off the primary package's export dir
        assert (EXPORT / "figures_manifest.json").exists()


class TestCli:
    def test_render_all_fixture_figures(self, tmp_path, capsys):
        rc = main(["render", "--spec", str(FIXTURES / "figures.json"), "--out", str(tmp_path)])
        assert rc == 0
        for name in ("trajectories.png", "correlation_curves.png", "cluster_panels.png"):
            assert (tmp_path / name).stat().st_size > 0

    def test_bad_spec_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"figures": [{"kind": "pie", "table": "x.csv"}]}))
        assert main(["render", "--spec", str(bad), "--out", str(tmp_path)]) == 2
        assert "figures[0]" in capsys.readouterr().err

    def test_empty_spec_exits_2(self, tmp_path):
        empty = tmp_path / "empty.json"
        empty.write_text(json.dumps({"figures": []}))
        assert main(["render", "--spec", str(empty), "--out", str(tmp_path)]) == 2
