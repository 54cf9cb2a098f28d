"""Model components: shared feature extractor, task-conditioned parameter
generator, classifier head(s), and the task discriminator.

The parameter generator maps a task ID to per-layer scale/shift coefficient
pairs; features pass through a normalized scale-and-shift plus a residual sum,
so a zero pair leaves the features untouched.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Tensor,
    gather_rows,
    mask_cols,
    matmul,
    no_grad,
    relu,
    sqrt,
    tsum,
)
from .errors import (
    CapacityError,
    ConfigurationError,
    ContractError,
    UnknownTaskError,
)

NORM_EPS = 1e-8


def _affine(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
    b = Tensor(np.zeros(fan_out), requires_grad=True)
    return w, b


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def film_transform(features, scale_coeff, shift_coeff, eps=NORM_EPS):
    """Normalized scale-and-shift with a residual sum.

    private = (phi1 / (||phi1|| + eps)) * g + phi2 / (||phi2|| + eps)
    output  = private + g

    Zero coefficient vectors make both terms exactly zero, so the output
    reduces to the input features.
    """
    features = _as_tensor(features)
    scale_coeff = _as_tensor(scale_coeff)
    shift_coeff = _as_tensor(shift_coeff)
    scale_norm = sqrt(tsum(scale_coeff * scale_coeff)) + eps
    shift_norm = sqrt(tsum(shift_coeff * shift_coeff)) + eps
    private = features * (scale_coeff / scale_norm) + shift_coeff / shift_norm
    return private + features


class FeatureExtractor:
    """Shared MLP trunk: ``depth`` affine+ReLU layers of ``width`` units."""

    def __init__(self, input_dim, width=256, depth=2, rng=None):
        if rng is None:
            rng = np.random.default_rng()
        self.input_dim = input_dim
        self.width = width
        self.layers = []
        fan_in = input_dim
        for _ in range(depth):
            self.layers.append(_affine(rng, fan_in, width))
            fan_in = width

    @property
    def feature_dim(self):
        return self.width

    def forward(self, x, layer_hook=None):
        x = _as_tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.input_dim:
            raise ConfigurationError(
                f"extractor expects (B, {self.input_dim}) inputs, got {x.data.shape}")
        a = x
        for index, (w, b) in enumerate(self.layers):
            a = relu(matmul(a, w) + b)
            if layer_hook is not None:
                a = layer_hook(index, a)
        return a

    def params(self):
        return [p for layer in self.layers for p in layer]


class ParameterGenerator:
    """Task embedding plus per-layer affine heads emitting (scale, shift).

    One embedding table is shared across layers by default; pass
    ``share_embedding=False`` for per-layer tables.
    """

    def __init__(self, layer_widths, embed_dim=64, capacity=32,
                 share_embedding=True, rng=None):
        if rng is None:
            rng = np.random.default_rng()
        self.embed_dim = embed_dim
        self.capacity = capacity
        self.share_embedding = share_embedding
        n_tables = 1 if share_embedding else len(layer_widths)
        bound = 1.0 / np.sqrt(embed_dim)
        self.embeddings = [
            Tensor(rng.uniform(-bound, bound, size=(capacity + 1, embed_dim)),
                   requires_grad=True)
            for _ in range(n_tables)
        ]
        self.heads = [
            (_affine(rng, embed_dim, d), _affine(rng, embed_dim, d))
            for d in layer_widths
        ]

    def coefficients(self, task_id, layer_index):
        """(scale, shift) row vectors for one layer, conditioned on task ID."""
        if not 1 <= task_id <= self.capacity:
            raise UnknownTaskError(
                f"task {task_id} outside generator capacity 1..{self.capacity}")
        table = self.embeddings[0 if self.share_embedding else layer_index]
        emb = gather_rows(table, [task_id])
        (w_scale, b_scale), (w_shift, b_shift) = self.heads[layer_index]
        scale = matmul(emb, w_scale) + b_scale
        shift = matmul(emb, w_shift) + b_shift
        return scale, shift

    def params(self):
        out = list(self.embeddings)
        for (ws, bs), (wt, bt) in self.heads:
            out += [ws, bs, wt, bt]
        return out


class ClassifierHeads:
    """Per-task affine heads (multi-head) or one shared head (single-head)."""

    def __init__(self, feature_dim, classes_per_task, mode="multi", rng_for_task=None):
        if mode not in ("multi", "single"):
            raise ConfigurationError(f"unknown head mode {mode!r}")
        self.feature_dim = feature_dim
        self.classes_per_task = classes_per_task
        self.mode = mode
        self._rng_for_task = rng_for_task or (lambda t: np.random.default_rng())
        self.heads = {}
        if mode == "single":
            self.heads[0] = _affine(self._rng_for_task(0), feature_dim, classes_per_task)

    def _key(self, task_id):
        return 0 if self.mode == "single" else task_id

    def add_head(self, task_id):
        """Register a freshly initialized head; no-op in single-head mode."""
        if self.mode == "single":
            return self.heads[0]
        if task_id in self.heads:
            raise ContractError(f"head for task {task_id} already registered")
        self.heads[task_id] = _affine(self._rng_for_task(task_id),
                                      self.feature_dim, self.classes_per_task)
        return self.heads[task_id]

    def forward(self, features, task_id):
        key = self._key(task_id)
        if key not in self.heads:
            raise UnknownTaskError(f"no classifier head for task {task_id}")
        w, b = self.heads[key]
        return matmul(_as_tensor(features), w) + b

    def output_dim(self, task_id):
        key = self._key(task_id)
        if key not in self.heads:
            raise UnknownTaskError(f"no classifier head for task {task_id}")
        return self.heads[key][0].data.shape[1]

    def params(self, task_ids=None):
        if task_ids is None:
            keys = sorted(self.heads)
        else:
            keys = sorted({self._key(t) for t in task_ids})
        out = []
        for key in keys:
            if key not in self.heads:
                raise UnknownTaskError(f"no classifier head for task {key}")
            out += list(self.heads[key])
        return out


class Discriminator:
    """MLP scoring features over {fake=0, task 1..K}; fixed arity K_max+1.

    Logits for not-yet-seen tasks are masked to a large negative constant,
    which gives them exactly zero softmax probability.
    """

    def __init__(self, feature_dim, k_max=32, hidden=64, rng=None):
        if rng is None:
            rng = np.random.default_rng()
        self.k_max = k_max
        self.w1, self.b1 = _affine(rng, feature_dim, hidden)
        self.w2, self.b2 = _affine(rng, hidden, k_max + 1)

    def forward(self, features, seen_tasks, freeze=False):
        if seen_tasks > self.k_max:
            raise CapacityError(
                f"{seen_tasks} tasks exceed discriminator capacity {self.k_max}")
        w1, b1, w2, b2 = self.w1, self.b1, self.w2, self.b2
        if freeze:
            # constant views sharing storage: gradient still flows to the
            # features, never to the discriminator weights
            w1, b1, w2, b2 = (Tensor(p.data) for p in (w1, b1, w2, b2))
        hidden = relu(matmul(_as_tensor(features), w1) + b1)
        logits = matmul(hidden, w2) + b2
        return mask_cols(logits, seen_tasks + 1)

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]


class ContinualModel:
    """The four parameter groups behind the training loop.

    transform_mode:
      * ``per_layer`` -- scale/shift after every hidden layer (MLP rule)
      * ``last``      -- only after the final hidden layer (conv-case rule)
      * ``off``       -- no task conditioning (ablation of the generator)
    """

    TRANSFORM_MODES = ("per_layer", "last", "off")

    def __init__(self, input_dim, classes_per_task, feature_width=256, depth=2,
                 head_mode="multi", k_max=32, embed_dim=64,
                 transform_mode="per_layer", share_embedding=True,
                 disc_hidden=64, seed=0):
        if transform_mode not in self.TRANSFORM_MODES:
            raise ConfigurationError(f"unknown transform mode {transform_mode!r}")
        self.input_dim = input_dim
        self.classes_per_task = classes_per_task
        self.head_mode = head_mode
        self.k_max = k_max
        self.transform_mode = transform_mode
        self.seed = seed

        self.extractor = FeatureExtractor(
            input_dim, width=feature_width, depth=depth,
            rng=np.random.default_rng([seed, 0]))
        self.generator = ParameterGenerator(
            [feature_width] * depth, embed_dim=embed_dim, capacity=k_max,
            share_embedding=share_embedding, rng=np.random.default_rng([seed, 1]))
        self.discriminator = Discriminator(
            feature_width, k_max=k_max, hidden=disc_hidden,
            rng=np.random.default_rng([seed, 2]))
        self.heads = ClassifierHeads(
            feature_width, classes_per_task, mode=head_mode,
            rng_for_task=lambda t: np.random.default_rng([seed, 3, t]))
        self.seen_tasks = []

    # -- task registry ------------------------------------------------------

    def register_task(self, task_id):
        """Mark a task as seen; creates its head in multi-head mode."""
        if task_id in self.seen_tasks:
            return
        if len(self.seen_tasks) + 1 > self.k_max:
            raise CapacityError(f"cannot register task {task_id}: capacity {self.k_max}")
        if self.head_mode == "multi":
            self.heads.add_head(task_id)
        self.seen_tasks.append(task_id)

    def add_head(self, task_id):
        return self.heads.add_head(task_id)

    def _check_task(self, task_id):
        if task_id not in self.seen_tasks:
            raise UnknownTaskError(f"task {task_id} was never registered")

    @property
    def n_seen(self):
        return len(self.seen_tasks)

    # -- forward paths ------------------------------------------------------

    def extract(self, x):
        """Common (task-invariant) features: the plain trunk."""
        return self.extractor.forward(x)

    def transform(self, features, task_id, layer_index=None):
        """Task-conditioned scale/shift/residual on one layer's features."""
        self._check_task(task_id)
        if layer_index is None:
            layer_index = len(self.extractor.layers) - 1
        scale, shift = self.generator.coefficients(task_id, layer_index)
        return film_transform(features, scale, shift)

    def task_features(self, x, task_id):
        """Features on the classification path, conditioned per transform_mode."""
        if self.transform_mode == "off":
            return self.extract(x)
        self._check_task(task_id)
        last = len(self.extractor.layers) - 1

        def hook(index, activations):
            if self.transform_mode == "last" and index != last:
                return activations
            scale, shift = self.generator.coefficients(task_id, index)
            return film_transform(activations, scale, shift)

        return self.extractor.forward(x, layer_hook=hook)

    def classify(self, features, task_id):
        """Logits for the task's classes; ReLU precedes the head."""
        self._check_task(task_id)
        return self.heads.forward(relu(_as_tensor(features)), task_id)

    def logits(self, x, task_id):
        return self.classify(self.task_features(x, task_id), task_id)

    def discriminate(self, features, seen_tasks=None, freeze=False):
        if seen_tasks is None:
            seen_tasks = self.n_seen
        return self.discriminator.forward(features, seen_tasks, freeze=freeze)

    # -- snapshots (inference mode, detached copies) -------------------------

    def snapshot_logits(self, x, task_id):
        with no_grad():
            return self.logits(x, task_id).data.copy()

    def snapshot_disc_logits(self, x, seen_tasks=None):
        if seen_tasks is None:
            seen_tasks = self.n_seen
        with no_grad():
            full = self.discriminate(self.extract(x), seen_tasks)
            return full.data[:, :seen_tasks + 1].copy()

    # -- parameter groups ----------------------------------------------------

    def extractor_params(self):
        return self.extractor.params()

    def head_params(self, task_ids=None):
        return self.heads.params(task_ids)

    def generator_params(self):
        return self.generator.params()

    def discriminator_params(self):
        return self.discriminator.params()

    def all_params(self):
        return (self.extractor_params() + self.head_params()
                + self.generator_params() + self.discriminator_params())
