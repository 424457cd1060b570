import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from primkit.data import load_dataset, load_recording
from primkit.errors import ConfigError
from primkit.primitives import N_PRIMITIVES, PRIMITIVE_NAMES
from primkit.synth import (
    PrimitiveTemplates,
    SynthConfig,
    cohort_shift,
    draw_script,
    generate_cohorts,
    generate_dataset,
    generate_patient,
    make_separable_windows,
    make_templates,
    script_shares,
    templates_for,
)


def small(**kw):
    base = dict(n_train_patients=3, n_test_patients=1, recordings_per_patient=2, recording_seconds=8.0,
                n_sensor_channels=4)
    base.update(kw)
    return SynthConfig(**base)


class TestTemplates:
    def test_pairwise_floor(self):
        for seed in range(5):
            d = make_templates(12, seed, min_distance=0.3).distances()
            assert d[np.triu_indices(5, 1)].min() >= 0.3

    def test_confusable_pairs_are_closest(self):
        tpl = make_templates(12, 0)
        d = tpl.distances()
        # reach/transport share half their channels exactly
        same = np.isclose(tpl.freq[0], tpl.freq[1])
        assert 0 < same.sum() < 12
        # stabilize and idle are both low-amplitude around an offset
        assert tpl.amplitude[3:].max() < tpl.amplitude[:3].min()
        assert d[0, 1] < d[0, 2]

    def test_unreachable_floor(self):
        with pytest.raises(ConfigError):
            make_templates(4, 0, min_distance=100.0, max_attempts=3)

    def test_dict_roundtrip(self):
        tpl = make_templates(3, 1)
        again = PrimitiveTemplates.from_dict(json.loads(json.dumps(tpl.to_dict())))
        np.testing.assert_array_equal(again.freq, tpl.freq)

    def test_bad_shape(self):
        with pytest.raises(ConfigError):
            PrimitiveTemplates(*(np.zeros((4, 3)),) * 5)


class TestScript:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 3000), st.floats(0.02, 1.0), st.floats(0.0, 2.0), st.integers(0, 10 ** 6))
    def test_covers_exactly(self, T, lo, extra, seed):
        script = draw_script(np.random.default_rng(seed), T, (lo, lo + extra))
        assert sum(n for _, n in script) == T
        assert all(n >= 1 for _, n in script)
        assert all(a[0] != b[0] for a, b in zip(script, script[1:]))


class TestPatient:
    def test_noiseless_equals_template(self):
        cfg = small(noise_std=0.0, idiosyncrasy=False)
        tpl = templates_for(cfg)
        p = generate_patient(cfg, 0, tpl)
        for rec, script in zip(p.recordings, p.scripts):
            expect = np.concatenate([tpl.render(k, n) for k, n in script])
            np.testing.assert_array_equal(rec.values, expect)

    def test_labels_match_script(self):
        p = generate_patient(small(), 1)
        for rec, script in zip(p.recordings, p.scripts):
            np.testing.assert_array_equal(rec.labels, np.repeat([k for k, _ in script], [n for _, n in script]))
            assert sum(n for _, n in script) / 100 == rec.duration_s

    def test_deterministic(self):
        a, b = generate_patient(small(), 2), generate_patient(small(), 2)
        assert a.meta == b.meta and a.scripts == b.scripts
        for ra, rb in zip(a.recordings, b.recordings):
            np.testing.assert_array_equal(ra.values, rb.values)

    def test_patients_differ_only_by_script_when_clean(self):
        cfg = small(noise_std=0.0, idiosyncrasy=False)
        tpl = templates_for(cfg)
        for idx in (0, 3):
            p = generate_patient(cfg, idx, tpl)
            for rec, script in zip(p.recordings, p.scripts):
                np.testing.assert_array_equal(rec.values, np.concatenate([tpl.render(k, n) for k, n in script]))

    def test_template_mismatch(self):
        with pytest.raises(ConfigError):
            small(templates=make_templates(5, 0))
        with pytest.raises(ConfigError):
            generate_patient(small(), 0, make_templates(5, 0))

    def test_index_range(self):
        with pytest.raises(ConfigError):
            generate_patient(small(), 4)

    @pytest.mark.parametrize("kw", [dict(duration_range=(0.01, 1.0)), dict(scale_range=(0, 1)),
                                    dict(noise_std=-1), dict(n_train_patients=0, n_test_patients=0),
                                    dict(duration_range=(2.0, 1.0))])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigError):
            small(**kw)

    def test_config_dict_roundtrip(self):
        cfg = small(test_shift=True, templates=make_templates(4, 3))
        again = SynthConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again.to_dict() == cfg.to_dict()


class TestShift:
    def test_only_held_out_shifted(self):
        on, off = small(test_shift=True), small(test_shift=False)
        for idx in range(4):
            a, b = generate_patient(on, idx), generate_patient(off, idx)
            same = all(np.array_equal(x.values, y.values) for x, y in zip(a.recordings, b.recordings))
            assert same == (not a.held_out)

    def test_affine_identity(self):
        on, off = small(test_shift=True), small(test_shift=False)
        shift = cohort_shift(on)
        a, b = generate_patient(on, 3), generate_patient(off, 3)
        np.testing.assert_allclose(a.recordings[0].values, b.recordings[0].values * shift.scale + shift.offset)
        assert np.all((shift.scale >= 0.5) & (shift.scale <= 2.0))
        assert np.all(np.abs(shift.offset) <= 1.0)

    def test_cohort_mean_moves_by_offset(self):
        # clean held-out cohort vs. a fresh draw of the same patients: only the shift separates them
        cfg = SynthConfig(n_train_patients=0, n_test_patients=6, recordings_per_patient=3, recording_seconds=30.0,
                          n_sensor_channels=4, idiosyncrasy=False, noise_std=0.2,
                          templates=PrimitiveTemplates(*(np.zeros((5, 4)),) * 5), min_template_distance=0.0)
        _, clean = generate_cohorts(cfg)
        shifted_cfg = replace(cfg, test_shift=True, seed=0)
        _, shifted = generate_cohorts(shifted_cfg)
        shift = cohort_shift(shifted_cfg)
        a = np.concatenate([r.values for p in shifted for r in p.recordings])
        b = np.concatenate([r.values for p in clean for r in p.recordings])
        n = len(a)
        diff = a.mean(0) - b.mean(0)
        bound = 3 * cfg.noise_std * (shift.scale + 1) / np.sqrt(n)
        assert np.all(np.abs(diff - shift.offset) < bound + 1e-12)


class TestDataset:
    def test_writes_loadable_dataset(self, tmp_path):
        cfg = small(n_train_patients=6, n_test_patients=2, recordings_per_patient=1, recording_seconds=4.0)
        summary = generate_dataset(cfg, tmp_path)
        man, recs, metas = load_dataset(tmp_path / "manifest_train.json")
        assert len(metas) == 8 and len(recs) == 6
        _, test_recs, _ = load_dataset(tmp_path / "manifest_test.json")
        assert len(test_recs) == 2
        train, test = generate_cohorts(cfg)
        for rec, p in zip(recs, train):
            np.testing.assert_array_equal(rec.values, p.recordings[0].values)
            np.testing.assert_array_equal(rec.labels, p.recordings[0].labels)
        counts = np.bincount(np.concatenate([r.labels for r in recs]), minlength=N_PRIMITIVES)
        for k, name in enumerate(PRIMITIVE_NAMES):
            assert summary["cohorts"]["train"]["shares"][name]["seconds"] == counts[k] / 100
        assert json.loads((tmp_path / "summary.json").read_text())["cohorts"]["test"]["patients"] == ["P006", "P007"]

    def test_deterministic_files(self, tmp_path):
        cfg = small(recordings_per_patient=1, recording_seconds=3.0)
        generate_dataset(cfg, tmp_path / "a")
        generate_dataset(cfg, tmp_path / "b")
        for f in ("summary.json", "patients.csv", "manifest_train.json", "recordings/P000_r0.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_recordings_roundtrip_exact(self, tmp_path):
        cfg = small(recordings_per_patient=1, recording_seconds=3.0)
        generate_dataset(cfg, tmp_path)
        p = generate_patient(cfg, 0)
        rec = load_recording(tmp_path / "recordings/P000_r0.csv", cfg.schema)
        np.testing.assert_array_equal(rec.values, p.recordings[0].values)

    def test_shares_sum_to_one(self):
        shares = script_shares([[(0, 30), (1, 70)], [(4, 100)]])
        assert shares["reach"]["fraction"] == 0.15 and shares["idle"]["seconds"] == 1.0
        assert sum(v["fraction"] for v in shares.values()) == pytest.approx(1.0)


class TestSeparable:
    def test_balanced_and_pure(self):
        ws = make_separable_windows(500, 4, seed=0)
        assert len(ws) == 500
        np.testing.assert_array_equal(np.bincount(ws.labels), [100] * 5)
        tl = ws.timestep_labels()
        assert np.all(tl == ws.labels[:, None])

    def test_seeded(self):
        a, b = make_separable_windows(50, 3, seed=1), make_separable_windows(50, 3, seed=1)
        np.testing.assert_array_equal(a.batch(), b.batch())
