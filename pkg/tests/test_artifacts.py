"""Artifact writers: headers, formatting, checksums, and byte determinism."""

import csv
import json

import numpy as np
import pytest

import storagecontrol as sc
from storagecontrol import artifacts
from storagecontrol.filtering import simulate_truth_and_filter


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


@pytest.fixture(scope="module")
def evaluation_report(params, reduced_solution, reduced_barriers):
    value, _ = reduced_solution
    _, smoothed = reduced_barriers
    return sc.estimate_J(
        params,
        smoothed,
        [(40.0, 50.0, 0.5, 0.0), (60.0, 20.0, 0.8, 0.5)],
        n_paths=4,
        dt=0.05,
        seed=1,
        value=value,
    )


class TestValuePolicy:
    def test_csv_header_and_row_count(self, tmp_path, reduced_solution):
        value, policy = reduced_solution
        csv_path, mid_path, npz_path = artifacts.write_value_policy(tmp_path, value, policy)
        header, rows = read_csv(csv_path)
        assert header == ["s", "q", "nu1", "t", "V", "mode", "rate"]
        g = value.grid
        assert len(rows) == g.s.size * g.q.size * g.nu.size

    def test_csv_matches_arrays(self, tmp_path, reduced_solution):
        value, policy = reduced_solution
        csv_path, _, _ = artifacts.write_value_policy(tmp_path, value, policy)
        _, rows = read_csv(csv_path)
        g = value.grid
        # spot-check a row in the middle of the block: values round-trip exactly
        i, j, k = 10, 3, 7
        row = rows[(i * g.q.size + j) * g.nu.size + k]
        assert float(row[0]) == g.s[i]
        assert float(row[4]) == value.V[i, j, k, 0]
        assert int(row[5]) == int(policy.mode[i, j, k, 0])

    def test_mid_slice_tracks_time_at_central_nodes(self, tmp_path, reduced_solution):
        value, policy = reduced_solution
        _, mid_path, _ = artifacts.write_value_policy(tmp_path, value, policy)
        header, rows = read_csv(mid_path)
        assert header == ["s", "q", "nu1", "t", "V", "mode", "rate"]
        g = value.grid
        assert len(rows) == g.s.size * g.t.size
        j = int(np.argmin(np.abs(g.q - 0.5 * (g.q[0] + g.q[-1]))))
        k = int(np.argmin(np.abs(g.nu - 0.5)))
        assert {float(r[1]) for r in rows} == {float(g.q[j])}
        assert {float(r[2]) for r in rows} == {float(g.nu[k])}
        i, n = 10, g.t.size // 2
        row = rows[i * g.t.size + n]
        assert float(row[3]) == g.t[n]
        assert float(row[4]) == value.V[i, j, k, n]

    def test_npz_round_trip(self, tmp_path, reduced_solution):
        value, policy = reduced_solution
        _, _, npz_path = artifacts.write_value_policy(tmp_path, value, policy)
        with np.load(npz_path) as data:
            assert np.array_equal(data["V"], value.V)
            assert np.array_equal(data["mode"], policy.mode)
            assert np.array_equal(data["s"], value.grid.s)
            assert data["rate"].shape == policy.mode.shape


class TestBarriers:
    def test_raw_only_header(self, tmp_path, reduced_barriers):
        raw, _ = reduced_barriers
        (path,) = artifacts.write_barriers(tmp_path, raw)
        header, rows = read_csv(path)
        assert header == ["q", "nu1", "t", "buy_level", "sell_level", "non_threshold"]
        g = raw.grid
        assert len(rows) == g.q.size * g.nu.size * g.t.size

    def test_smoothed_columns_and_fit_json(self, tmp_path, reduced_barriers):
        raw, smoothed = reduced_barriers
        csv_path, fit_path = artifacts.write_barriers(tmp_path, raw, smoothed)
        header, rows = read_csv(csv_path)
        assert header[-2:] == ["smooth_buy", "smooth_sell"]
        g = raw.grid
        # the first row is the (q[0], nu[0], t[0]) node
        assert float(rows[0][6]) == pytest.approx(
            float(smoothed.buy(g.q[0], g.nu[0], g.t[0])), rel=1e-12
        )
        fit = json.loads(fit_path.read_text())
        assert fit["degrees"] == list(smoothed.degrees)
        assert np.asarray(fit["coef_buy"]).shape == smoothed.coef_buy.shape
        assert fit["max_fit_deviation"] == smoothed.max_fit_deviation

    def test_infinite_levels_serialize_readably(self, tmp_path, reduced_barriers):
        raw, _ = reduced_barriers
        (path,) = artifacts.write_barriers(tmp_path, raw)
        _, rows = read_csv(path)
        seen = {row[3] for row in rows} | {row[4] for row in rows}
        # censored nodes exist near the horizon on this grid and must
        # round-trip through float()
        assert any(not np.isfinite(float(v)) for v in seen)
        for v in seen:
            float(v)


class TestFilterPaths:
    def test_single_path_columns(self, tmp_path, params):
        paths = simulate_truth_and_filter(params, horizon=0.02, dt=5e-3, seed=3)
        out = artifacts.write_filter_paths(tmp_path, paths)
        header, rows = read_csv(out)
        assert header == ["t", "S", "Y", "pi_1", "pi_2"]
        assert len(rows) == paths.t.size
        assert float(rows[0][3]) + float(rows[0][4]) == pytest.approx(1.0, abs=1e-12)

    def test_batch_writes_first_path(self, tmp_path, params):
        paths = simulate_truth_and_filter(params, horizon=0.02, dt=5e-3, seed=3, n_paths=3)
        out = artifacts.write_filter_paths(tmp_path, paths)
        _, rows = read_csv(out)
        assert float(rows[-1][1]) == paths.S[0, -1]
        assert int(rows[-1][2]) == int(paths.Y[0, -1])


class TestEvaluation:
    def test_csv_one_row_per_start(self, tmp_path, evaluation_report):
        csv_path, json_path = artifacts.write_evaluation(tmp_path, [evaluation_report])
        header, rows = read_csv(csv_path)
        assert header == [
            "s", "q", "nu1", "t", "scheme", "n_paths", "mean",
            "standard_error", "grid_value",
        ]
        assert len(rows) == 2
        assert rows[0][4] == "plain"
        assert float(rows[0][6]) == evaluation_report.mean[0]
        assert float(rows[1][8]) == evaluation_report.rows()[1]["grid_value"]

    def test_json_carries_run_metadata(self, tmp_path, evaluation_report):
        _, json_path = artifacts.write_evaluation(tmp_path, [evaluation_report])
        payload = json.loads(json_path.read_text())
        assert len(payload) == 1
        assert payload[0]["dt"] == 0.05
        assert payload[0]["seed"] == 1
        assert payload[0]["scheme"] == "plain"
        assert len(payload[0]["rows"]) == 2

    def test_missing_grid_value_leaves_field_empty(self, tmp_path, params, reduced_barriers):
        _, smoothed = reduced_barriers
        rep = sc.estimate_J(params, smoothed, [(40.0, 50.0, 0.5, 0.0)],
                            n_paths=2, dt=0.1, seed=7)
        csv_path, _ = artifacts.write_evaluation(tmp_path, [rep])
        _, rows = read_csv(csv_path)
        assert rows[0][8] == ""


class TestControlledPaths:
    def test_terminal_row_has_empty_control_fields(self, tmp_path, params, reduced_barriers):
        _, smoothed = reduced_barriers
        path = sc.simulate_controlled_path(
            params, smoothed, (40.0, 50.0, 0.5, 0.7), dt=0.1, seed=2
        )
        out = artifacts.write_controlled_paths(tmp_path, [path])
        header, rows = read_csv(out)
        assert header == ["path", "t", "S", "Q", "nu1", "mode", "rate", "region"]
        assert len(rows) == path.t.size
        assert rows[-1][5] == "" and rows[-1][6] == "" and rows[-1][7] == ""
        assert float(rows[-1][1]) == pytest.approx(params.T, abs=1e-12)
        assert int(rows[0][0]) == 0

    def test_multiple_paths_indexed(self, tmp_path, params, reduced_barriers):
        _, smoothed = reduced_barriers
        paths = [
            sc.simulate_controlled_path(params, smoothed, (40.0, 50.0, 0.5, 0.8),
                                        dt=0.1, seed=s)
            for s in (2, 3)
        ]
        out = artifacts.write_controlled_paths(tmp_path, paths)
        _, rows = read_csv(out)
        assert {row[0] for row in rows} == {"0", "1"}


class TestTransformPath:
    def test_columns_match_dimension(self, tmp_path):
        spec = sc.spec_from_config(
            {"kind": "kinked_ou_2d", "pull": [1.0, 1.0], "sigma": 0.8,
             "tangential": [0.2, -0.2], "x0": [0.3, 0.0]}
        )
        tp = sc.simulate_transformed(spec, horizon=0.05, dt=0.01, seed=4)
        out = artifacts.write_transform_path(tmp_path, tp)
        header, rows = read_csv(out)
        assert header == ["t", "x_1", "x_2", "region"]
        assert len(rows) == tp.t.size
        assert set(row[3] for row in rows) <= {"0", "1"}


class TestFormatting:
    def test_floats_use_shortest_round_trip_form(self, tmp_path):
        path = artifacts._write_csv(
            tmp_path / "x.csv", ["a", "b", "c"], [[0.1, np.float64(1 / 3), 2]]
        )
        text = path.read_text()
        assert text.splitlines()[1] == "0.1,0.3333333333333333,2"

    def test_json_sorts_keys_and_handles_numpy(self, tmp_path):
        out = artifacts._write_json(
            tmp_path / "x.json",
            {"b": np.float64(2.5), "a": np.arange(3), "c": np.int64(7)},
        )
        text = out.read_text()
        assert text.index('"a"') < text.index('"b"') < text.index('"c"')
        assert json.loads(text) == {"a": [0, 1, 2], "b": 2.5, "c": 7}


class TestManifest:
    def test_checksums_cover_and_verify_all_files(self, tmp_path, reduced_solution):
        value, policy = reduced_solution
        written = artifacts.write_value_policy(tmp_path, value, policy)
        sub = tmp_path / "nested"
        sub.mkdir()
        (sub / "note.txt").write_text("hello\n")
        man_path = artifacts.write_manifest(tmp_path, "solve", {"seed": 0})
        manifest = json.loads(man_path.read_text())
        assert manifest["subcommand"] == "solve"
        assert manifest["config"] == {"seed": 0}
        assert set(manifest["versions"]) == {"storagecontrol", "numpy", "scipy", "python"}
        expected = {str(p.relative_to(tmp_path)) for p in written} | {"nested/note.txt"}
        assert set(manifest["files"]) == expected
        for rel, digest in manifest["files"].items():
            assert artifacts.sha256_file(tmp_path / rel) == digest

    def test_manifest_excludes_itself(self, tmp_path):
        (tmp_path / "a.csv").write_text("x\n")
        man_path = artifacts.write_manifest(tmp_path, "check", {})
        manifest = json.loads(man_path.read_text())
        assert "manifest.json" not in manifest["files"]


class TestByteDeterminism:
    def test_rewriting_reproduces_identical_bytes(self, tmp_path, params,
                                                  reduced_solution, reduced_barriers,
                                                  evaluation_report):
        value, policy = reduced_solution
        raw, smoothed = reduced_barriers
        blobs = {}
        for round_dir in ("first", "second"):
            d = tmp_path / round_dir
            d.mkdir()
            artifacts.write_value_policy(d, value, policy)
            artifacts.write_barriers(d, raw, smoothed)
            artifacts.write_evaluation(d, [evaluation_report])
            artifacts.write_manifest(d, "all", {"seed": 1})
            blobs[round_dir] = {
                p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()
            }
        assert set(blobs["first"]) == set(blobs["second"])
        for name in blobs["first"]:
            assert blobs["first"][name] == blobs["second"][name], name
