import numpy as np
import pytest

from duplexasr import frontend as fe
from duplexasr.errors import IngestError, UsageError
from duplexasr.numerics import rng_for
from duplexasr.verify import spec_sub_oracle


class TestSpecSub:
    def test_zero_substitutions_is_identity(self):
        feats = rng_for(0, "ss").normal(size=(50, 8)).astype(np.float32)
        out = fe.spec_sub(feats, fe.SpecSubConfig(t_max=30, t_min=0, n_max=0), rng_for(1, "d"))
        assert np.array_equal(out, feats)

    def test_self_copy_is_identity_on_span(self):
        # t' == t substitutes a span with itself
        feats = rng_for(2, "ss").normal(size=(10, 4)).astype(np.float32)

        class FixedRng:
            def __init__(self, draws):
                self.draws = list(draws)

            def integers(self, lo, hi):
                return self.draws.pop(0)

        out = fe.spec_sub(feats, fe.SpecSubConfig(4, 4, 1), FixedRng([1, 4, 3, 3]))
        assert np.array_equal(out, feats)

    def test_reference_trace_matches_oracle(self):
        cfg = fe.SpecSubConfig(t_max=30, t_min=0, n_max=3)
        feats = rng_for(3, "ss").normal(size=(100, 8)).astype(np.float32)
        got = fe.spec_sub(feats, cfg, rng_for(42, "draws"))
        want = spec_sub_oracle(feats, cfg, rng_for(42, "draws"))
        assert np.array_equal(got, want)

    def test_width_larger_than_utterance_skips(self):
        feats = rng_for(4, "ss").normal(size=(3, 4)).astype(np.float32)
        cfg = fe.SpecSubConfig(t_max=50, t_min=40, n_max=3)
        out = fe.spec_sub(feats, cfg, rng_for(5, "d"))
        assert np.array_equal(out, feats)  # every draw exceeds T=3

    def test_information_flows_backward_to_forward(self):
        # frame content may only originate at an index <= its own
        cfg = fe.SpecSubConfig(t_max=20, t_min=1, n_max=3)
        for case in range(100):
            feats = np.arange(60, dtype=np.float32).reshape(60, 1)
            out = fe.spec_sub(feats, cfg, rng_for(6, "flow", case))
            assert (out[:, 0] <= feats[:, 0]).all()

    def test_span_count_and_width_bounds(self):
        cfg = fe.SpecSubConfig(t_max=12, t_min=3, n_max=3)
        for case in range(200):
            feats = rng_for(7, "sb", case).normal(size=(64, 3)).astype(np.float32)
            out = fe.spec_sub(feats, cfg, rng_for(8, "sb-draws", case))
            changed = np.flatnonzero((out != feats).any(axis=1))
            assert out.shape == feats.shape
            if changed.size == 0:
                continue
            spans = np.split(changed, np.flatnonzero(np.diff(changed) > 1) + 1)
            assert len(spans) <= cfg.n_max
            # merged spans can exceed t_max, single spans cannot exceed
            # n_max * t_max in total
            assert changed.size <= cfg.n_max * cfg.t_max

    def test_bad_config_rejected(self):
        with pytest.raises(UsageError):
            fe.spec_sub(np.zeros((5, 2), dtype=np.float32), fe.SpecSubConfig(1, 2, 1), rng_for(0, "x"))


class TestSpecAugment:
    def test_all_zero_config_is_identity(self):
        feats = rng_for(9, "sa").normal(size=(30, 8)).astype(np.float32)
        cfg = fe.SpecAugConfig(f_max=0, num_f_masks=0, t_mask_max=0, num_t_masks=0)
        assert np.array_equal(fe.spec_augment(feats, cfg, rng_for(10, "d")), feats)

    def test_full_width_frequency_mask(self):
        feats = np.ones((20, 6), dtype=np.float32)

        class FixedRng:
            def __init__(self, draws):
                self.draws = list(draws)

            def integers(self, lo, hi):
                return self.draws.pop(0)

        cfg = fe.SpecAugConfig(f_max=6, num_f_masks=1, t_mask_max=0, num_t_masks=0)
        out = fe.spec_augment(feats, cfg, FixedRng([6, 0]))
        assert (out == 0.0).all()

    def test_seeded_replay_matches_oracle(self):
        cfg = fe.SpecAugConfig(f_max=3, num_f_masks=2, t_mask_max=10, num_t_masks=2)
        feats = rng_for(11, "sa").normal(size=(50, 8)).astype(np.float32)
        got = fe.spec_augment(feats, cfg, rng_for(12, "draws"))
        rng = rng_for(12, "draws")
        want = feats.copy()
        for _ in range(2):
            width = int(rng.integers(0, 4))
            start = int(rng.integers(0, 8 - width + 1))
            want[:, start : start + width] = 0.0
        for _ in range(2):
            width = int(rng.integers(0, 11))
            start = int(rng.integers(0, 50 - width + 1))
            want[start : start + width, :] = 0.0
        assert np.array_equal(got, want)

    def test_unmasked_cells_unchanged_and_idempotent(self):
        cfg = fe.SpecAugConfig(f_max=3, num_f_masks=2, t_mask_max=8, num_t_masks=2)
        for case in range(50):
            feats = rng_for(13, "sa", case).normal(size=(40, 8)).astype(np.float32) + 5.0
            out = fe.spec_augment(feats, cfg, rng_for(14, "sa-d", case))
            mask = out == 0.0
            assert np.array_equal(out[~mask], feats[~mask])
            again = fe.spec_augment(out, cfg, rng_for(14, "sa-d", case))
            assert np.array_equal(out, again)  # same draws mask the same cells

    def test_mask_wider_than_features_rejected(self):
        cfg = fe.SpecAugConfig(f_max=10)
        with pytest.raises(UsageError):
            fe.spec_augment(np.zeros((5, 8), dtype=np.float32), cfg, rng_for(15, "x"))


class TestFeatureFiles:
    def test_round_trip(self, tmp_path):
        feats = rng_for(16, "ff").normal(size=(13, 7)).astype(np.float32)
        path = tmp_path / "a.feat"
        fe.write_features(str(path), feats)
        assert np.array_equal(fe.read_features(str(path)), feats)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.feat"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(IngestError):
            fe.read_features(str(path))

    def test_truncated_payload_rejected(self, tmp_path):
        feats = np.zeros((4, 4), dtype=np.float32)
        path = tmp_path / "t.feat"
        fe.write_features(str(path), feats)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(IngestError):
            fe.read_features(str(path))


class TestManifest:
    def _corpus(self, n=3):
        rng = rng_for(17, "corpus")
        return [
            fe.Utterance(
                id=f"u{i}",
                features=rng.normal(size=(12 + i, 8)).astype(np.float32),
                tokens=[1 + (i + j) % 5 for j in range(2 + i)],
            )
            for i in range(n)
        ]

    def test_empty_manifest(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("")
        assert fe.load_manifest(str(path)) == []

    def test_round_trip(self, tmp_path):
        utts = self._corpus()
        path = tmp_path / "m.tsv"
        fe.save_manifest(str(path), utts, str(tmp_path / "feats"))
        loaded = fe.load_manifest(str(path), vocab=8)
        assert [u.id for u in loaded] == [u.id for u in utts]
        for a, b in zip(loaded, utts):
            assert np.array_equal(a.features, b.features)
            assert a.tokens == b.tokens

    def test_missing_feature_file_names_utterance(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("u7\tmissing.feat\t1 2\n")
        with pytest.raises(IngestError, match="u7"):
            fe.load_manifest(str(path))

    def test_reserved_token_id_rejected(self, tmp_path):
        utts = self._corpus(1)
        path = tmp_path / "m.tsv"
        fe.save_manifest(str(path), utts, str(tmp_path / "feats"))
        text = path.read_text().replace("\t1 ", "\t6 ")
        path.write_text(text)
        with pytest.raises(IngestError, match="u0"):
            fe.load_manifest(str(path), vocab=8)

    def test_dim_mismatch_names_utterance(self, tmp_path):
        utts = self._corpus(2)
        utts[1].features = utts[1].features[:, :5]
        path = tmp_path / "m.tsv"
        fe.save_manifest(str(path), utts, str(tmp_path / "feats"))
        with pytest.raises(IngestError, match="u1"):
            fe.load_manifest(str(path))


class TestSyntheticCorpus:
    def test_single_token_length(self):
        utts = fe.generate_synthetic_corpus(
            1, vocab=8, t_range=(12, 12), rng=rng_for(18, "sy")
        )
        assert utts[0].features.shape[0] == fe.TEMPLATE_FRAMES + fe.PAD_FRAMES
        assert len(utts[0].tokens) == 1

    def test_same_seed_bit_identical(self):
        a = fe.generate_synthetic_corpus(5, 8, (20, 60), rng_for(19, "sy"))
        b = fe.generate_synthetic_corpus(5, 8, (20, 60), rng_for(19, "sy"))
        for x, y in zip(a, b):
            assert x.tokens == y.tokens
            assert np.array_equal(x.features, y.features)

    def test_range_too_small_rejected(self):
        with pytest.raises(UsageError):
            fe.generate_synthetic_corpus(1, 8, (1, 5), rng_for(20, "sy"))

    def test_vocab_too_small_rejected(self):
        with pytest.raises(UsageError):
            fe.generate_synthetic_corpus(1, 3, (12, 40), rng_for(21, "sy"))

    def test_tokens_stay_in_annotation_range(self):
        utts = fe.generate_synthetic_corpus(20, 8, (12, 100), rng_for(22, "sy"))
        for u in utts:
            assert all(1 <= t <= 5 for t in u.tokens)
            # enough frames for CTC even with all-repeat targets
            assert u.features.shape[0] >= 8 * len(u.tokens) + 4
