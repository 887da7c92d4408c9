"""Scikit-learn style front end for the recognition pipeline.

``fit`` indexes reference images (one per class) and ``predict`` runs the
full retrieve/augment/generate path, so the recognizer plugs into
``cross_val_score``, ``clone``, ``get_params`` and friends::

    clf = SignRecognizer(descriptor=MockDescriptor.from_catalog(catalog),
                         embedder=MockEmbedder(64))
    clf.fit(images, codes, names=names)
    clf.predict(query_images)
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .catalog import Catalog, SignClass
from .errors import ValidationError
from .generation import OracleGenerator, recognize
from .indexing import index_catalog
from .retrieval import DEFAULT_K, Backends, retrieve

REJECTED = "REJECTED"


def _check_images(X):
    if isinstance(X, (str, bytes)) or not hasattr(X, "__len__"):
        raise ValidationError("X must be a sequence of image handles (paths or bytes)")
    if len(X) == 0:
        raise ValidationError("X is empty")
    return list(X)


def _check_k(k):
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValidationError(f"k must be a positive integer, got {k!r}")
    return int(k)


class SignRecognizer(ClassifierMixin, BaseEstimator):
    """Zero-shot sign recognizer over a catalog of reference designs.

    Parameters
    ----------
    descriptor : DescriptorBackend
        Vision-language backend used for reference and query images.
    embedder : EmbedderBackend
        Text embedding backend; its dimension fixes the store dimension.
    generator : GeneratorBackend, optional
        Final classifier. Defaults to an :class:`OracleGenerator` that knows
        nothing, i.e. always answers NONE, so pass a real one for prediction.
    k : int
        Number of retrieved candidates.
    scope_filter : FilterModel, optional
        Rank-1 distance filter applied before generation.
    strict : bool
        Refuse to index descriptions that violate the abstraction rule.
    """

    def __init__(self, descriptor=None, embedder=None, generator=None, k=DEFAULT_K,
                 scope_filter=None, strict=False):
        self.descriptor = descriptor
        self.embedder = embedder
        self.generator = generator
        self.k = k
        self.scope_filter = scope_filter
        self.strict = strict

    def _backends(self):
        if self.descriptor is None or self.embedder is None:
            raise ValidationError("descriptor and embedder backends are required")
        return Backends(self.descriptor, self.embedder,
                        self.generator if self.generator is not None else OracleGenerator())

    def fit(self, X, y, names=None, categories=None):
        """Index one reference image per class; ``y`` holds the sign codes."""
        X = _check_images(X)
        y = [str(c) for c in y]
        if len(X) != len(y):
            raise ValidationError(f"X has {len(X)} images but y has {len(y)} codes")
        names = list(names) if names is not None else y
        categories = list(categories) if categories is not None else [None] * len(y)
        _check_k(self.k)
        catalog = Catalog(
            classes=tuple(SignClass(c, n, img, cat) for img, c, n, cat in zip(X, y, names, categories)),
            dimension=self._backends().embedder.dimension,
        )
        result = index_catalog(catalog, self.descriptor, self.embedder, strict=self.strict)
        self.catalog_ = result.catalog
        self.store_ = result.store
        self.violations_ = result.violations
        self.classes_ = np.array(y, dtype=object)
        return self

    @classmethod
    def from_store(cls, store, **params):
        """A fitted recognizer over an existing store (no re-indexing)."""
        est = cls(**params)
        est.store_ = store
        est.catalog_ = None
        est.violations_ = {}
        est.classes_ = np.array(store.codes, dtype=object)
        return est

    def recognize(self, image, truth=None):
        """Every :class:`RecognitionOutcome` for one image."""
        check_is_fitted(self, "store_")
        return recognize(image, self.store_, self._backends(), _check_k(self.k),
                         scope_filter=self.scope_filter, truth=truth)

    def predict(self, X):
        """Final code of the first sign in each image, or ``"REJECTED"``."""
        out = []
        for image in _check_images(X):
            outcomes = self.recognize(image)
            out.append(outcomes[0].final_code if outcomes else REJECTED)
        return np.array(out, dtype=object)

    def kneighbors(self, X, n_neighbors=None, return_distance=True):
        """Retrieved codes (and L2 distances) for the first sign in each image."""
        check_is_fitted(self, "store_")
        k = _check_k(self.k if n_neighbors is None else n_neighbors)
        codes, dists = [], []
        for image in _check_images(X):
            sets = retrieve(image, self.store_, self._backends(), k)
            hits = sets[0].hits if sets else ()
            codes.append([h.code for h in hits] + [None] * (k - len(hits)))
            dists.append([h.distance for h in hits] + [np.inf] * (k - len(hits)))
        codes = np.array(codes, dtype=object)
        return (np.array(dists), codes) if return_distance else codes
