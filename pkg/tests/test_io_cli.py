import json
import struct

import numpy as np
import pytest

from dcemap import PlaneSpec, VolumeSeries, mpr_slice
from dcemap.cli import cli_dispatch
from dcemap.fileio import (export_slice, read_maps, read_phantom_spec,
                           read_volume_series, window_to_u8, write_maps,
                           write_plane_file, write_times_sidecar,
                           write_volume_series)
from dcemap.nifti import read_nifti, write_nifti
from dcemap.phantom import synthesize
from dcemap.pipeline import exclusion_mask, fit_volume
from test_phantom import one_region_spec


class TestNifti:
    def test_float32_round_trip(self, tmp_path):
        rng = np.random.default_rng(40)
        arr = rng.normal(size=(5, 4, 8, 8)).astype(np.float32)
        path = tmp_path / "vol.nii"
        write_nifti(path, arr, (0.5, 0.5, 1.25))
        back, spacing = read_nifti(path)
        assert np.array_equal(back, arr.astype(np.float64))
        assert spacing == (0.5, 0.5, 1.25)

    def test_3d_round_trip(self, tmp_path):
        arr = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        path = tmp_path / "map.nii"
        write_nifti(path, arr, (1.0, 1.0, 1.0))
        back, _ = read_nifti(path)
        assert np.array_equal(back, arr)

    def test_int16_slope_intercept(self, tmp_path):
        raw = np.array([[[0, 1000], [2000, 4000]]], dtype=np.int16)
        path = tmp_path / "ct.nii"
        write_nifti(path, raw, (1.0, 1.0, 1.0), scl_slope=0.5, scl_inter=-1000.0)
        back, _ = read_nifti(path)
        assert np.array_equal(back, raw.astype(np.float64) * 0.5 - 1000.0)

    def test_zero_slope_treated_as_one(self, tmp_path):
        raw = np.array([[[10, 20], [30, 40]]], dtype=np.int16)
        path = tmp_path / "ct.nii"
        write_nifti(path, raw, (1.0, 1.0, 1.0), scl_slope=0.0, scl_inter=5.0)
        back, _ = read_nifti(path)
        assert np.array_equal(back, raw.astype(np.float64) + 5.0)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.nii"
        blob = bytearray(400)
        struct.pack_into("<i", blob, 0, 348)
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="bad volume file"):
            read_nifti(path)

    def test_truncated_payload(self, tmp_path):
        arr = np.zeros((2, 3, 4), dtype=np.float32)
        path = tmp_path / "vol.nii"
        write_nifti(path, arr, (1.0, 1.0, 1.0))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ValueError, match="bad volume file"):
            read_nifti(path)


class TestVolumeSeriesIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(41)
        times = np.array([0.0, 2.0, 4.0, 6.0, 100.0])
        series = VolumeSeries((8, 8, 4), (0.5, 0.5, 1.25), times,
                              rng.normal(size=(5, 4, 8, 8)).astype(np.float32))
        write_volume_series(series, tmp_path / "v.nii", tmp_path / "v.json")
        back = read_volume_series(tmp_path / "v.nii", tmp_path / "v.json")
        assert np.array_equal(back.data, series.data)
        assert back.spacing == series.spacing
        assert np.array_equal(back.frame_times, times)

    def test_timing_mismatch(self, tmp_path):
        series = VolumeSeries((4, 4, 2), (1.0, 1.0, 1.0), np.arange(5.0),
                              np.zeros((5, 2, 4, 4)))
        write_volume_series(series, tmp_path / "v.nii", tmp_path / "v.json")
        write_times_sidecar(tmp_path / "short.json", np.arange(4.0))
        with pytest.raises(ValueError, match="timing mismatch"):
            read_volume_series(tmp_path / "v.nii", tmp_path / "short.json")


class TestWriteMaps:
    @pytest.fixture()
    def fitted_maps(self, schedule27):
        series, _ = synthesize(one_region_spec(), schedule27)
        return fit_volume(series, exclusion_mask(series))

    def test_round_trip(self, tmp_path, fitted_maps):
        write_maps(fitted_maps, tmp_path / "maps", sigma_mm=1.0,
                   threshold_hu=100.0)
        back = read_maps(tmp_path / "maps")
        for name, arr in fitted_maps.maps.items():
            assert np.array_equal(back.maps[name],
                                  arr.astype(np.float32).astype(np.float64),
                                  equal_nan=True), name
        assert np.array_equal(back.status, fitted_maps.status)

    def test_status_codes_closed(self, tmp_path, fitted_maps):
        write_maps(fitted_maps, tmp_path / "maps")
        back = read_maps(tmp_path / "maps")
        assert set(np.unique(back.status)) <= {0, 1, 2, 3, 4}

    def test_manifest_defaults(self, tmp_path, fitted_maps):
        write_maps(fitted_maps, tmp_path / "maps", sigma_mm=1.0,
                   threshold_hu=100.0)
        manifest = json.loads((tmp_path / "maps" / "manifest.json").read_text())
        assert manifest["threshold_hu"] == 100.0
        assert manifest["sigma_mm"] == 1.0
        assert manifest["version"]
        assert manifest["bounds_policy"]["y_max_margin_hu"] == 40.0
        assert manifest["pipeline_order"][0] == "read"
        assert "timestamp" in manifest

    def test_io_failure(self, fitted_maps, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        with pytest.raises(OSError, match="io failure"):
            write_maps(fitted_maps, blocker / "maps")


class TestExportSlice:
    def test_windowing(self):
        vals = np.array([[10.0, 20.0, 15.0, np.nan, 5.0, 25.0]])
        out = window_to_u8(vals, 10.0, 20.0)
        assert list(out[0]) == [0, 255, 128, 0, 0, 255]

    def test_csv_matches_mpr(self, tmp_path):
        vol = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
        write_nifti(tmp_path / "map.nii", vol, (1.0, 1.0, 1.0))
        plane = PlaneSpec(origin=np.array([0.0, 0.0, 0.5]),
                          axis_u=np.array([1.0, 0.0, 0.0]),
                          axis_v=np.array([0.0, 1.0, 0.0]),
                          size=(4, 3), sample_spacing=1.0)
        write_plane_file(tmp_path / "plane.json", plane)
        sampled = export_slice(tmp_path / "map.nii", tmp_path / "plane.json",
                               tmp_path / "out", window=(0.0, 24.0))
        expected = mpr_slice(vol.astype(np.float64), (1.0, 1.0, 1.0), plane)
        assert np.array_equal(sampled, expected, equal_nan=True)
        rows = (tmp_path / "out.csv").read_text().strip().split("\n")
        parsed = np.array([[float(v) for v in row.split(",")] for row in rows])
        assert np.array_equal(parsed, expected, equal_nan=True)

    def test_constant_map_uniform_pgm(self, tmp_path):
        vol = np.full((2, 2, 2), 7.0, dtype=np.float32)
        write_nifti(tmp_path / "map.nii", vol, (1.0, 1.0, 1.0))
        plane = PlaneSpec(origin=np.array([0.0, 0.0, 0.0]),
                          axis_u=np.array([1.0, 0.0, 0.0]),
                          axis_v=np.array([0.0, 1.0, 0.0]),
                          size=(2, 2), sample_spacing=1.0)
        write_plane_file(tmp_path / "plane.json", plane)
        export_slice(tmp_path / "map.nii", tmp_path / "plane.json",
                     tmp_path / "flat", window=(0.0, 14.0))
        pgm = (tmp_path / "flat.pgm").read_bytes()
        header, payload = pgm.split(b"255\n", 1)
        assert header.startswith(b"P5")
        assert payload == bytes([128, 128, 128, 128])


def phantom_spec_doc():
    return {
        "dims": [16, 16, 2], "spacing_mm": [1.0, 1.0, 1.0],
        "background_hu": 0.0,
        "regions": [
            {"shape": {"kind": "box", "lo_mm": [2, 2, 0], "hi_mm": [13, 13, 1]},
             "params": {"y_max": 300.0, "t_peak": 12.0, "alpha": 3.0}},
        ],
        "noise_sigma_hu": 0.0, "seed": 7,
        "schedule": {"heart_rate_bpm": 60, "beats_per_frame": 2},
    }


class TestPhantomSpecFile:
    def test_parse(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(phantom_spec_doc()))
        spec, schedule = read_phantom_spec(path)
        assert spec.dims == (16, 16, 2)
        assert spec.seed == 7
        assert len(spec.regions) == 1
        assert spec.regions[0].truth.t_peak == 12.0
        assert len(schedule) == 27

    def test_unknown_shape(self, tmp_path):
        doc = phantom_spec_doc()
        doc["regions"][0]["shape"] = {"kind": "torus"}
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="unknown region shape"):
            read_phantom_spec(path)


class TestCli:
    def test_phantom_fit_slice_chain(self, tmp_path):
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(phantom_spec_doc()))
        assert cli_dispatch(["phantom", str(spec_path),
                             "--out-4d", str(tmp_path / "ph.nii"),
                             "--out-times", str(tmp_path / "times.json"),
                             "--truth-dir", str(tmp_path / "truth")]) == 0
        assert cli_dispatch(["fit", str(tmp_path / "ph.nii"),
                             str(tmp_path / "times.json"),
                             str(tmp_path / "maps"),
                             "--aorta-sphere", "0,0,0,1.5",
                             "--workers", "1"]) == 0
        names = {p.name for p in (tmp_path / "maps").iterdir()}
        assert names == {"y_max.nii", "t_peak.nii", "alpha.nii", "t01.nii",
                         "rt.nii", "rmse.nii", "r2.nii", "status.nii",
                         "manifest.json"}
        plane = {"origin_mm": [0, 0, 0.5], "axis_u": [1, 0, 0],
                 "axis_v": [0, 1, 0], "size": [16, 16],
                 "sample_spacing_mm": 1.0}
        (tmp_path / "plane.json").write_text(json.dumps(plane))
        assert cli_dispatch(["slice", str(tmp_path / "maps" / "rt.nii"),
                             str(tmp_path / "plane.json"),
                             str(tmp_path / "rt_slice"),
                             "--window", "10,20"]) == 0
        assert (tmp_path / "rt_slice.pgm").exists()
        assert (tmp_path / "rt_slice.csv").exists()

    def test_missing_roi_is_usage_error(self, tmp_path, capsys):
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(phantom_spec_doc()))
        cli_dispatch(["phantom", str(spec_path),
                      "--out-4d", str(tmp_path / "ph.nii"),
                      "--out-times", str(tmp_path / "times.json"),
                      "--truth-dir", str(tmp_path / "truth")])
        code = cli_dispatch(["fit", str(tmp_path / "ph.nii"),
                             str(tmp_path / "times.json"),
                             str(tmp_path / "maps")])
        assert code == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert cli_dispatch(["bogus"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_missing_file_is_data_error(self, tmp_path):
        code = cli_dispatch(["fit", str(tmp_path / "nope.nii"),
                             str(tmp_path / "nope.json"),
                             str(tmp_path / "maps"),
                             "--aorta-sphere", "0,0,0,1"])
        assert code == 2

    def test_study_determinism(self, tmp_path):
        doc = phantom_spec_doc()
        doc["noise_sigma_hu"] = 20.0
        doc["dims"] = [8, 8, 2]
        doc["regions"][0]["shape"] = {"kind": "box", "lo_mm": [0, 0, 0],
                                      "hi_mm": [7, 7, 1]}
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(doc))
        args = ["study", str(spec_path), "--budgets", "27,7", "--reps", "3",
                "--seed", "7"]
        assert cli_dispatch(args + ["--out", str(tmp_path / "a.csv")]) == 0
        assert cli_dispatch(args + ["--out", str(tmp_path / "b.csv")]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_phantom_determinism_excluding_timestamp(self, tmp_path):
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(phantom_spec_doc()))
        for tag in ("a", "b"):
            cli_dispatch(["phantom", str(spec_path),
                          "--out-4d", str(tmp_path / f"{tag}.nii"),
                          "--out-times", str(tmp_path / f"{tag}.json"),
                          "--truth-dir", str(tmp_path / f"truth_{tag}")])
        assert (tmp_path / "a.nii").read_bytes() == (tmp_path / "b.nii").read_bytes()
        ma = json.loads((tmp_path / "truth_a" / "manifest.json").read_text())
        mb = json.loads((tmp_path / "truth_b" / "manifest.json").read_text())
        ma.pop("timestamp")
        mb.pop("timestamp")
        assert ma == mb
