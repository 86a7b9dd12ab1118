"""The scikit-learn facade: params, fitting, transform/predict/score."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from univse.estimator import UnifiedEmbedding, as_records, check_fit_input
from univse.vision import FeatureSet


@pytest.fixture(scope="module")
def fitted(tiny_synth):
    est = UnifiedEmbedding(embed_dim=24, basic_dim=16, modifier_dim=8,
                           epochs=8, batch_size=8, n_negatives=3, seed=1)
    return est.fit((tiny_synth.corpus, tiny_synth.features))


class TestInputChecks:
    def test_not_a_pair(self, tiny_synth):
        with pytest.raises(TypeError, match="pair"):
            check_fit_input(tiny_synth.corpus)
        with pytest.raises(TypeError, match="pair"):
            check_fit_input((tiny_synth.corpus, tiny_synth.features, 3))

    def test_wrong_member_types(self, tiny_synth):
        with pytest.raises(TypeError, match="Corpus"):
            check_fit_input(("nope", tiny_synth.features))
        with pytest.raises(TypeError, match="FeatureSet"):
            check_fit_input((tiny_synth.corpus, "nope"))

    def test_empty_corpus(self, tiny_synth):
        from univse.corpus import Corpus

        with pytest.raises(ValueError, match="empty"):
            check_fit_input((Corpus([]), tiny_synth.features))

    def test_as_records_accepts_corpus_and_lists(self, tiny_synth):
        assert as_records(tiny_synth.corpus) == tiny_synth.corpus.records
        subset = tiny_synth.corpus.records[:2]
        assert as_records(subset) == subset
        with pytest.raises(TypeError, match="CaptionRecord"):
            as_records(["a string"])


class TestSklearnContract:
    def test_get_set_params_round_trip(self):
        est = UnifiedEmbedding(epochs=3, lr=0.01)
        params = est.get_params()
        assert params["epochs"] == 3
        assert params["lr"] == 0.01
        est.set_params(alpha=0.5, batch_size=4)
        assert est.alpha == 0.5
        assert est.batch_size == 4

    def test_clone_keeps_params_and_drops_state(self, fitted):
        twin = clone(fitted)
        assert twin.get_params() == fitted.get_params()
        assert not hasattr(twin, "model_")

    def test_unfitted_methods_raise(self, tiny_synth):
        est = UnifiedEmbedding()
        with pytest.raises(NotFittedError):
            est.transform(tiny_synth.corpus)
        with pytest.raises(NotFittedError):
            est.predict(tiny_synth.corpus.records[:1])
        with pytest.raises(NotFittedError):
            est.encode_images(tiny_synth.features)


class TestFittedBehaviour:
    def test_fit_attributes(self, fitted, tiny_synth):
        assert fitted.model_.dims.embed_dim == 24
        assert fitted.model_.dims.feature_depth == 32
        assert len(fitted.metrics_) == 8
        assert sorted(fitted.image_ids_) == tiny_synth.corpus.image_ids
        assert fitted.image_embeddings_.shape == (len(fitted.image_ids_), 24)

    def test_transform_shape_and_norms(self, fitted, tiny_synth):
        embs = fitted.transform(tiny_synth.corpus)
        assert embs.shape == (len(tiny_synth.corpus.records), 24)
        # mixed caption embeddings sit inside the unit ball, never outside
        norms = np.linalg.norm(embs, axis=1)
        assert np.all(norms <= 1.0 + 1e-9)
        assert np.all(norms > 0.5)

    def test_transform_empty(self, fitted):
        out = fitted.transform([])
        assert out.shape == (0, 24)

    def test_transform_family_subset_changes_rows(self, fitted, tiny_synth):
        full = fitted.transform(tiny_synth.corpus.records[:4])
        no_rel = fitted.transform(tiny_synth.corpus.records[:4], families=("obj", "attr"))
        assert full.shape == no_rel.shape
        assert not np.allclose(full, no_rel)

    def test_predict_returns_known_image_ids(self, fitted, tiny_synth):
        predictions = fitted.predict(tiny_synth.corpus.records[:5])
        assert len(predictions) == 5
        assert set(predictions) <= set(fitted.image_ids_)

    def test_score_beats_chance_on_training_data(self, fitted, tiny_synth):
        score = fitted.score(tiny_synth.corpus)
        assert score > 1.0 / len(fitted.image_ids_)

    def test_score_with_explicit_targets(self, fitted, tiny_synth):
        records = tiny_synth.corpus.records[:4]
        predicted = fitted.predict(records)
        assert fitted.score(records, y=list(predicted)) == 1.0
        assert fitted.score([], y=[]) == 0.0

    def test_encode_images_subset(self, fitted, tiny_synth):
        some = tiny_synth.features.image_ids[:3]
        pooled = fitted.encode_images(tiny_synth.features, some)
        assert pooled.shape == (3, 24)
        assert np.allclose(np.linalg.norm(pooled, axis=1), 1.0, atol=1e-9)

    def test_out_dir_persists_checkpoints(self, tiny_synth, tmp_path):
        est = UnifiedEmbedding(embed_dim=24, basic_dim=16, modifier_dim=8,
                               epochs=2, batch_size=8, n_negatives=2, seed=1,
                               out_dir=str(tmp_path))
        est.fit((tiny_synth.corpus, tiny_synth.features))
        assert (tmp_path / "last.uvck").exists()
        assert (tmp_path / "metrics.jsonl").exists()

    def test_refit_same_seed_is_deterministic(self, fitted, tiny_synth):
        est = UnifiedEmbedding(embed_dim=24, basic_dim=16, modifier_dim=8,
                               epochs=8, batch_size=8, n_negatives=3, seed=1)
        est.fit((tiny_synth.corpus, tiny_synth.features))
        assert np.array_equal(est.image_embeddings_, fitted.image_embeddings_)


def test_feature_depth_is_inferred(tiny_synth):
    est = UnifiedEmbedding(embed_dim=24, basic_dim=16, modifier_dim=8,
                           epochs=1, batch_size=8, n_negatives=2)
    est.fit((tiny_synth.corpus, tiny_synth.features))
    assert est.model_.dims.feature_depth == tiny_synth.features.stack(
        tiny_synth.features.image_ids[:1])[0].shape[-1]


def test_fit_rejects_uncovered_corpus(tiny_synth):
    partial = FeatureSet([tiny_synth.features[tiny_synth.features.image_ids[0]]])
    est = UnifiedEmbedding(epochs=1)
    with pytest.raises(ValueError, match="missing"):
        est.fit((tiny_synth.corpus, partial))
