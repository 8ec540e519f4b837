import json

import numpy as np
import pytest

from callsift import persistence
from callsift.forest import ForestParams
from callsift.models import EncodingOptions, VotingEnsembleClassifier, make_classifier
from callsift.persistence import ArchiveError, load_model, save_model
from callsift.traces import SyscallVocabulary


def fitted(kind, small_corpus, small_labels):
    enc = EncodingOptions(truncation=60)
    if kind == "hist-rf":
        clf = make_classifier(kind, seed=2, encoding=enc,
                              params=ForestParams(n_trees=8, seed=2))
    elif kind == "lsm":
        clf = make_classifier(kind, seed=2, encoding=enc, folds=5)
    elif kind == "ensemble":
        clf = VotingEnsembleClassifier({
            "tree": make_classifier("tree", seed=2, encoding=enc),
            "linear": make_classifier("linear", seed=2, encoding=enc),
        })
    else:
        clf = make_classifier(kind, seed=2, encoding=enc)
    return clf.fit(small_corpus, small_labels)


@pytest.mark.parametrize("kind", ["tree", "hist-rf", "linear", "lsm", "ensemble"])
def test_round_trip_preserves_predictions_bit_exactly(
    kind, tmp_path, small_corpus, small_labels
):
    clf = fitted(kind, small_corpus, small_labels)
    path = tmp_path / f"{kind}.json"
    save_model(clf, path, seed=2, config_digest="d" * 64)
    loaded = load_model(path)
    p1, s1 = clf.predict(small_corpus)
    p2, s2 = loaded.predict(small_corpus)
    assert np.array_equal(p1, p2)
    assert np.array_equal(s1, s2)  # bit-exact scores, not just labels


def test_archive_is_self_describing(tmp_path, small_corpus, small_labels):
    clf = fitted("tree", small_corpus, small_labels)
    save_model(clf, tmp_path / "m.json", seed=2, config_digest="abc",
               created_at="2026-01-01T00:00:00+00:00")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["format_version"] == 1
    assert doc["kind"] == "tree"
    assert doc["vocabulary"] == list(clf.vocab.names)
    assert doc["encoding"] == {"truncation": 60, "normalize": True}
    assert doc["provenance"]["config_hash"] == "abc"
    assert doc["provenance"]["seed"] == 2
    assert doc["provenance"]["created_at"] == "2026-01-01T00:00:00+00:00"
    assert len(doc["payload_sha256"]) == 64


def test_future_format_version_rejected(tmp_path, small_corpus, small_labels):
    clf = fitted("linear", small_corpus, small_labels)
    save_model(clf, tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["format_version"] = 2
    (tmp_path / "future.json").write_text(json.dumps(doc))
    with pytest.raises(ArchiveError, match="format_version"):
        load_model(tmp_path / "future.json")


def test_corrupted_payload_rejected(tmp_path, small_corpus, small_labels):
    clf = fitted("linear", small_corpus, small_labels)
    save_model(clf, tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["payload"]["bias"] = doc["payload"]["bias"] + 1.0
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    with pytest.raises(ArchiveError, match="checksum"):
        load_model(tmp_path / "bad.json")
    (tmp_path / "noise.json").write_text("{broken")
    with pytest.raises(ArchiveError, match="JSON"):
        load_model(tmp_path / "noise.json")


def test_unfitted_model_cannot_be_saved(tmp_path):
    with pytest.raises(ArchiveError, match="trained"):
        save_model(make_classifier("tree"), tmp_path / "m.json")


def test_loaded_model_keeps_vocabulary_and_scores_new_calls(
    tmp_path, small_corpus, small_labels
):
    from conftest import make_trace

    clf = fitted("hist-rf", small_corpus, small_labels)
    save_model(clf, tmp_path / "m.json")
    loaded = load_model(tmp_path / "m.json")
    assert isinstance(loaded.vocab, SyscallVocabulary)
    assert loaded.vocab.names == clf.vocab.names
    alien = make_trace([(0, "NtNeverSeen")] * 3, label=None)
    pred, _ = loaded.predict([alien])
    assert pred.shape == (1,)


def test_canonical_hash_stable():
    assert persistence.config_hash({"b": 1, "a": 2}) == persistence.config_hash(
        {"a": 2, "b": 1}
    )
