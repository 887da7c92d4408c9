from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest
from sklearn.base import clone

from signrag.config import ConfigError, api_key, build_backends, load_config
from signrag.descriptor import MockDescriptor
from signrag.embedder import MockEmbedder
from signrag.errors import ValidationError
from signrag.estimators import SignRecognizer
from signrag.generation import NoisyGenerator, OracleGenerator


def test_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"k": 3, "dimension": 16, "seed": 1}))
    c = load_config(cfg, env={"SIGNRAG_K": "4", "SIGNRAG_SEED": "2"}, overrides={"k": 7})
    assert (c.k, c.seed, c.dimension) == (7, 2, 16)
    assert load_config(env={}).k == 5


def test_credentials_and_unknown_keys_rejected(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"generator_api_key": "x"}))
    with pytest.raises(ConfigError):
        load_config(cfg, env={})
    cfg.write_text(json.dumps({"colour": "red"}))
    with pytest.raises(ConfigError, match="colour"):
        load_config(cfg, env={})


@pytest.mark.parametrize("override", [{"k": 0}, {"dimension": 0}, {"timeout": 0}, {"generator": "magic"}])
def test_invalid_values(override):
    with pytest.raises(ConfigError):
        load_config(env={}, overrides=override)


def test_api_key_lookup():
    env = {"SIGNRAG_API_KEY": "shared", "SIGNRAG_GENERATOR_API_KEY": "gen"}
    assert api_key("generator", env) == "gen"
    assert api_key("embedder", env) == "shared"
    assert api_key("embedder", {}) is None


def test_relative_paths_resolve_against_config(corpus):
    c = load_config(corpus.config, env={})
    assert c.mock_catalog == str(corpus.catalog.resolve())


def test_build_noisy_backends(config, catalog):
    b = build_backends(dataclasses.replace(config, generator="noisy"), catalog, env={})
    assert isinstance(b.generator, NoisyGenerator) and b.generator.answers
    assert isinstance(b.descriptor, MockDescriptor)


def _recognizer(catalog):
    desc = MockDescriptor.from_catalog(catalog)
    return SignRecognizer(descriptor=desc, embedder=MockEmbedder(64), generator=OracleGenerator(desc.answers()))


def test_get_params_and_clone(catalog):
    est = _recognizer(catalog)
    params = est.get_params()
    assert set(params) == {"descriptor", "embedder", "generator", "k", "scope_filter", "strict"}
    twin = clone(est)
    assert twin.get_params()["k"] == 5
    assert not hasattr(twin, "store_")


def test_fit_predict(catalog):
    X = [s.reference_image for s in catalog]
    y = catalog.codes
    est = _recognizer(catalog).fit(X, y, names=[s.name for s in catalog], categories=[s.category for s in catalog])
    assert len(est.store_) == 20
    assert list(est.predict(X)) == y
    assert est.score(X, y) == 1.0
    dists, codes = est.kneighbors(X[:2], n_neighbors=3)
    assert dists.shape == (2, 3) and codes[0, 0] == y[0] and dists[0, 0] == 0.0


def test_fit_validation(catalog):
    est = _recognizer(catalog)
    with pytest.raises(ValidationError):
        est.fit([], [])
    with pytest.raises(ValidationError):
        est.fit([catalog.classes[0].reference_image], ["R1-1", "R1-2"])
    with pytest.raises(ValidationError):
        SignRecognizer(MockDescriptor(), MockEmbedder(4), k=0).fit([b"x"], ["R1-1"])


def test_predict_before_fit(catalog):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        _recognizer(catalog).predict([catalog.classes[0].reference_image])


def test_from_store(catalog, store):
    desc = MockDescriptor.from_catalog(catalog)
    est = SignRecognizer.from_store(store, descriptor=desc, embedder=MockEmbedder(64),
                                    generator=OracleGenerator(desc.answers()))
    assert est.predict([catalog.get("R4-7").reference_image])[0] == "R4-7"
    np.testing.assert_array_equal(est.classes_, np.array(store.codes, dtype=object))
