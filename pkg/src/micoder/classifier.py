"""One-vs-all binary classifiers for MI codes over hashed text features.

Each (code, context-size) pair gets an independent logistic model trained
by seeded-shuffle stochastic gradient descent on L2-regularized logistic
loss with inverse-class-frequency example weights. Training is fully
deterministic: same data, order, and seed give bitwise-identical weights.

The registry maps (code, k) to either a native model or a reference to an
external HTTP inference service speaking the /predict protocol.
"""

from __future__ import annotations

import json
import math
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime, timezone
from hashlib import blake2b
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .codes import ALL_CODES, MiCode, parse_code
from .corpus import ContextualUtterance
from .features import FEATURE_SPACE, FeatureVector, featurize

_MAX_LOGIT = 35.0


class TrainingError(ValueError):
    """Raised for unusable training sets (e.g. a single class)."""


class ExternalModelError(RuntimeError):
    """Protocol violation from an external inference endpoint."""


class ExternalModelUnavailable(ExternalModelError):
    """Transient failure (timeout, connection refused); safe to retry."""


@dataclass(frozen=True)
class Hyper:
    l2_penalty: float = 1e-4
    epochs: int = 20
    learning_rate: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.l2_penalty <= 0:
            raise ValueError("l2_penalty must be positive")

    def to_dict(self) -> dict:
        return {
            "l2_penalty": self.l2_penalty,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Hyper":
        return cls(
            l2_penalty=float(data["l2_penalty"]),
            epochs=int(data["epochs"]),
            learning_rate=float(data["learning_rate"]),
            seed=int(data["seed"]),
        )


@dataclass(frozen=True)
class CodeClassifier:
    """Sparse view of a dense coefficient vector over the hashed feature
    space; untouched coordinates are implicitly zero."""

    code: MiCode
    k: int
    weight_indices: np.ndarray
    weight_values: np.ndarray
    bias: float
    hyper: Hyper
    loss_history: tuple[float, ...] = ()

    def weight_at(self, index: int) -> float:
        pos = int(np.searchsorted(self.weight_indices, index))
        if pos < len(self.weight_indices) and self.weight_indices[pos] == index:
            return float(self.weight_values[pos])
        return 0.0

    def decision(self, fv: FeatureVector) -> float:
        if len(fv) == 0:
            return self.bias
        pos = np.searchsorted(self.weight_indices, fv.indices)
        pos = np.minimum(pos, max(len(self.weight_indices) - 1, 0))
        if len(self.weight_indices) == 0:
            return self.bias
        hit = self.weight_indices[pos] == fv.indices
        return float(self.weight_values[pos[hit]] @ fv.values[hit] + self.bias)

    def predict_fv(self, fv: FeatureVector) -> float:
        return _sigmoid(self.decision(fv))


@dataclass(frozen=True)
class ExternalModelRef:
    endpoint_url: str
    model_id: str
    timeout: float = 10.0


@dataclass(frozen=True)
class EvalReport:
    code: MiCode
    k: int
    precision: float
    recall: float
    f1: float
    support: int
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def to_dict(self) -> dict:
        return {
            "code": self.code.value,
            "k": self.k,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
        }


def _sigmoid(z: float) -> float:
    z = max(-_MAX_LOGIT, min(_MAX_LOGIT, z))
    return 1.0 / (1.0 + math.exp(-z))


def training_set_hash(examples: Iterable[tuple[str, bool]]) -> str:
    h = blake2b(digest_size=16)
    for text, positive in examples:
        h.update(text.encode("utf-8"))
        h.update(b"\x01" if positive else b"\x00")
        h.update(b"\x1e")
    return h.hexdigest()


def _fit_sgd(
    fvs: Sequence[FeatureVector],
    y: np.ndarray,
    code: MiCode,
    k: int,
    hyper: Hyper,
) -> CodeClassifier:
    n = len(fvs)
    n_pos = int(y.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise TrainingError(
            f"single-class training set for {code.value} (k={k}): "
            f"{n_pos} positives, {n_neg} negatives"
        )
    # Inverse-frequency example weights keep rare positive classes from
    # being swamped by the negative pool.
    w_pos = n / (2.0 * n_pos)
    w_neg = n / (2.0 * n_neg)
    sw = np.where(y, w_pos, w_neg)

    weights = np.zeros(FEATURE_SPACE, dtype=np.float64)
    bias = 0.0
    rng = np.random.default_rng(hyper.seed)
    losses: list[float] = []

    def objective() -> float:
        total = 0.0
        for i in range(n):
            fv = fvs[i]
            z = float(weights[fv.indices] @ fv.values) + bias if len(fv) else bias
            z = max(-_MAX_LOGIT, min(_MAX_LOGIT, z))
            # log(1+exp(-m)) with m = z if positive else -z
            m = z if y[i] else -z
            total += sw[i] * math.log1p(math.exp(-m))
        touched = weights[weights != 0.0]
        return total + 0.5 * hyper.l2_penalty * float(touched @ touched)

    losses.append(objective())
    for epoch in range(hyper.epochs):
        lr = hyper.learning_rate / (1.0 + epoch)
        order = rng.permutation(n)
        for t in order:
            fv = fvs[t]
            if len(fv) == 0:
                z = bias
            else:
                z = float(weights[fv.indices] @ fv.values) + bias
            p = _sigmoid(z)
            g = (p - float(y[t])) * sw[t]
            if len(fv):
                wi = weights[fv.indices]
                weights[fv.indices] = wi - lr * (g * fv.values + hyper.l2_penalty * wi)
            bias -= lr * g
        losses.append(objective())

    nz = np.nonzero(weights)[0]
    return CodeClassifier(
        code=code,
        k=k,
        weight_indices=nz,
        weight_values=weights[nz].copy(),
        bias=bias,
        hyper=hyper,
        loss_history=tuple(losses),
    )


def train_code_classifier(
    examples: Sequence[tuple[ContextualUtterance, bool]],
    code: MiCode,
    k: int,
    hyper: Hyper = Hyper(),
) -> CodeClassifier:
    """Fit one code's binary model on (contextual utterance, is_positive)
    pairs. Requires at least one example of each class."""
    for cu, _ in examples:
        if cu.k != k:
            raise ValueError(f"example context size {cu.k} does not match k={k}")
    fvs = [featurize(cu.context_text) for cu, _ in examples]
    y = np.array([bool(p) for _, p in examples], dtype=bool)
    return _fit_sgd(fvs, y, code, k, hyper)


def train_one_vs_all(
    labeled: Sequence[tuple[ContextualUtterance, frozenset[MiCode]]],
    k: int,
    hyper: Hyper = Hyper(),
    codes: Sequence[MiCode] = ALL_CODES,
) -> dict[MiCode, CodeClassifier]:
    """Train an independent binary model per code with shared featurization.

    Codes whose label column is single-class are skipped (reported by
    absence); retraining one code never affects another.
    """
    fvs = [featurize(cu.context_text) for cu, _ in labeled]
    models: dict[MiCode, CodeClassifier] = {}
    for code in codes:
        y = np.array([code in codeset for _, codeset in labeled], dtype=bool)
        if not y.any() or y.all():
            continue
        models[code] = _fit_sgd(fvs, y, code, k, hyper)
    return models


def predict_code(model: CodeClassifier, cu: ContextualUtterance) -> float:
    """Positive-class probability for one contextual utterance."""
    if model.k != cu.k:
        raise ValueError(f"model expects k={model.k}, got context with k={cu.k}")
    return model.predict_fv(featurize(cu.context_text))


def stratified_split(
    y: np.ndarray, test_frac: float = 0.2, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded 80/20-style split preserving the class balance of a binary
    label column. Returns (train_indices, test_indices)."""
    if not 0 < test_frac < 1:
        raise ValueError("test_frac must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train_parts: list[np.ndarray] = []
    test_parts: list[np.ndarray] = []
    for cls in (True, False):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(round(len(idx) * test_frac))
        # keep at least one example of the class on each side when possible
        n_test = min(max(n_test, 1 if len(idx) > 1 else 0), len(idx) - 1)
        test_parts.append(idx[:n_test])
        train_parts.append(idx[n_test:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(test_parts))


def evaluate(
    model: CodeClassifier,
    test: Sequence[tuple[ContextualUtterance, bool]],
    threshold: float = 0.5,
) -> EvalReport:
    """Positive-class precision/recall/F1 on labeled test examples."""
    if not test:
        raise ValueError("empty test set")
    tp = fp = fn = tn = 0
    for cu, positive in test:
        predicted = predict_code(model, cu) >= threshold
        if predicted and positive:
            tp += 1
        elif predicted:
            fp += 1
        elif positive:
            fn += 1
        else:
            tn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(
        code=model.code,
        k=model.k,
        precision=precision,
        recall=recall,
        f1=f1,
        support=tp + fn,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )


# --- external inference adapter ----------------------------------------------


def external_predict(
    endpoint: ExternalModelRef, batch: Sequence[ContextualUtterance]
) -> list[dict[MiCode, float]]:
    """POST a batch to an external /predict service and validate the reply.

    The reply must align one item per input, in order, with every score a
    probability in [0, 1]. Network-level failures raise
    :class:`ExternalModelUnavailable` (retriable); contract violations raise
    :class:`ExternalModelError`.
    """
    if not batch:
        return []
    ks = {cu.k for cu in batch}
    if len(ks) != 1:
        raise ValueError(f"mixed context sizes in batch: {sorted(ks)}")
    payload = {
        "k": batch[0].k,
        "items": [
            {"utterance_id": cu.target.utterance_id, "context_text": cu.context_text}
            for cu in batch
        ],
    }
    request = urllib.request.Request(
        endpoint.endpoint_url,
        data=json.dumps(payload).encode("utf-8"),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(request, timeout=endpoint.timeout) as response:
            body = response.read()
    except urllib.error.HTTPError as exc:
        raise ExternalModelError(f"endpoint returned HTTP {exc.code}") from exc
    except (urllib.error.URLError, TimeoutError, OSError) as exc:
        raise ExternalModelUnavailable(f"endpoint unreachable: {exc}") from exc

    try:
        reply = json.loads(body)
        items = reply["items"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ExternalModelError(f"malformed reply: {exc}") from exc
    if not isinstance(items, list) or len(items) != len(batch):
        raise ExternalModelError(
            f"expected {len(batch)} items, got {len(items) if isinstance(items, list) else 'non-list'}"
        )

    results: list[dict[MiCode, float]] = []
    for cu, item in zip(batch, items):
        if not isinstance(item, dict) or item.get("utterance_id") != cu.target.utterance_id:
            raise ExternalModelError(
                f"reply misaligned at utterance {cu.target.utterance_id!r}"
            )
        scores_raw = item.get("scores")
        if not isinstance(scores_raw, dict):
            raise ExternalModelError("item missing scores object")
        scores: dict[MiCode, float] = {}
        for name, value in scores_raw.items():
            code = parse_code(name)
            if not isinstance(value, (int, float)) or not 0.0 <= float(value) <= 1.0:
                raise ExternalModelError(
                    f"score for {name} outside [0, 1]: {value!r}"
                )
            scores[code] = float(value)
        results.append(scores)
    return results


# --- model registry -----------------------------------------------------------

REGISTRY_FORMAT_VERSION = 1


@dataclass
class ModelRegistry:
    """At most one active model per (code, k), native or external."""

    models: dict[tuple[MiCode, int], CodeClassifier | ExternalModelRef] = field(
        default_factory=dict
    )
    metadata: dict[tuple[MiCode, int], dict] = field(default_factory=dict)

    def put(
        self,
        model: CodeClassifier | ExternalModelRef,
        code: MiCode,
        k: int,
        trained_at: str | None = None,
        train_hash: str | None = None,
        eval_report: EvalReport | None = None,
    ) -> None:
        self.models[(code, k)] = model
        self.metadata[(code, k)] = {
            "trained_at": trained_at or _now_iso(),
            "training_set_hash": train_hash,
            "eval": eval_report.to_dict() if eval_report else None,
        }

    def get(self, code: MiCode, k: int) -> CodeClassifier | ExternalModelRef | None:
        return self.models.get((code, k))

    def available_codes(self, k: int) -> list[MiCode]:
        return [code for code in ALL_CODES if (code, k) in self.models]

    def version(self) -> str:
        h = blake2b(digest_size=12)
        for (code, k) in sorted(self.models, key=lambda ck: (ck[0].value, ck[1])):
            meta = self.metadata.get((code, k), {})
            h.update(f"{code.value}|{k}|{meta.get('training_set_hash')}|{meta.get('trained_at')}".encode())
        return h.hexdigest()

    def scores(
        self, cu: ContextualUtterance, codes: Sequence[MiCode] | None = None
    ) -> dict[MiCode, float]:
        """Per-code probabilities at cu's k for the requested codes (default:
        every code with a model). Raises KeyError for a missing model."""
        wanted = list(codes) if codes is not None else self.available_codes(cu.k)
        out: dict[MiCode, float] = {}
        external: dict[str, list[MiCode]] = {}
        fv: FeatureVector | None = None
        for code in wanted:
            model = self.models.get((code, cu.k))
            if model is None:
                raise KeyError(f"no model for code {code.value} at k={cu.k}")
            if isinstance(model, ExternalModelRef):
                external.setdefault(model.endpoint_url, []).append(code)
            else:
                if fv is None:
                    fv = featurize(cu.context_text)
                out[code] = model.predict_fv(fv)
        for url, ext_codes in external.items():
            ref = self.models[(ext_codes[0], cu.k)]
            assert isinstance(ref, ExternalModelRef)
            reply = external_predict(ref, [cu])[0]
            for code in ext_codes:
                if code not in reply:
                    raise ExternalModelError(f"endpoint omitted score for {code.value}")
                out[code] = reply[code]
        return out


def predict_labels(
    registry: ModelRegistry, cu: ContextualUtterance, threshold: float = 0.5
) -> dict[MiCode, float]:
    """Every code whose probability clears the threshold, with confidences.

    Needs a model for each of the 17 codes at cu's k. The result may be
    empty or exceed three codes; capping at three is an annotation-store
    rule, not a model rule.
    """
    scores = registry.scores(cu, codes=ALL_CODES)
    return {code: p for code, p in scores.items() if p >= threshold}


def _now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def registry_key(code: MiCode, k: int) -> str:
    return f"{code.value}|{k}"


def save_registry(registry: ModelRegistry, path: str | Path) -> None:
    """Write the registry as an index plus one weight file per native model."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index: dict = {"format_version": REGISTRY_FORMAT_VERSION, "models": {}}
    for (code, k) in sorted(registry.models, key=lambda ck: (ck[0].value, ck[1])):
        model = registry.models[(code, k)]
        meta = dict(registry.metadata.get((code, k), {}))
        entry: dict = {"code": code.value, "k": k, **meta}
        if isinstance(model, ExternalModelRef):
            entry["external"] = {
                "endpoint_url": model.endpoint_url,
                "model_id": model.model_id,
                "timeout": model.timeout,
            }
        else:
            fname = f"{code.value}_k{k}.npz"
            np.savez_compressed(
                path / fname,
                indices=model.weight_indices,
                values=model.weight_values,
                bias=np.array([model.bias]),
                loss_history=np.array(model.loss_history),
            )
            entry["file"] = fname
            entry["hyper"] = model.hyper.to_dict()
        index["models"][registry_key(code, k)] = entry
    tmp = path / "index.json.tmp"
    tmp.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path / "index.json")


def load_registry(path: str | Path) -> ModelRegistry:
    path = Path(path)
    index_path = path / "index.json"
    if not index_path.exists():
        raise FileNotFoundError(f"no registry index at {index_path}")
    index = json.loads(index_path.read_text(encoding="utf-8"))
    if index.get("format_version") != REGISTRY_FORMAT_VERSION:
        raise ValueError(f"unsupported registry format: {index.get('format_version')!r}")
    registry = ModelRegistry()
    for entry in index["models"].values():
        code = parse_code(entry["code"])
        k = int(entry["k"])
        if "external" in entry:
            ext = entry["external"]
            model: CodeClassifier | ExternalModelRef = ExternalModelRef(
                endpoint_url=ext["endpoint_url"],
                model_id=ext["model_id"],
                timeout=float(ext.get("timeout", 10.0)),
            )
        else:
            data = np.load(path / entry["file"])
            model = CodeClassifier(
                code=code,
                k=k,
                weight_indices=data["indices"],
                weight_values=data["values"],
                bias=float(data["bias"][0]),
                hyper=Hyper.from_dict(entry["hyper"]),
                loss_history=tuple(float(x) for x in data["loss_history"]),
            )
        registry.models[(code, k)] = model
        registry.metadata[(code, k)] = {
            "trained_at": entry.get("trained_at"),
            "training_set_hash": entry.get("training_set_hash"),
            "eval": entry.get("eval"),
        }
    return registry


def retrain_code(
    registry: ModelRegistry,
    labeled: Sequence[tuple[ContextualUtterance, frozenset[MiCode]]],
    code: MiCode,
    k: int,
    hyper: Hyper = Hyper(),
    trained_at: str | None = None,
) -> CodeClassifier:
    """Train one (code, k) model from labeled contexts and install it."""
    examples = [(cu, code in codeset) for cu, codeset in labeled]
    model = train_code_classifier(examples, code, k, hyper)
    h = training_set_hash((cu.context_text, pos) for cu, pos in examples)
    registry.put(model, code, k, trained_at=trained_at, train_hash=h)
    return model
