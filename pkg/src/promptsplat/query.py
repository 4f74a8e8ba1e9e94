"""Text-promptable querying.

A prompt resolves to a stored unit embedding; the rendered compressed
feature map at (camera, t) is decoded back to the full embedding space,
and each pixel is scored by a 2-way softmax of its prompt similarity
against its most competitive canonical phrase:

    score = min_i exp(f.p) / (exp(f.p) + exp(f.c_i)) = sigmoid(f.p - max_i f.c_i)

Scores are materialized in float32 so clients thresholding the raw map
reproduce the server's mask bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .codec import FeatureCodec, decode
from .rasterizer import render_scene
from .scene import Camera

CANONICAL_PHRASES = ("object", "things", "stuff", "texture")
DEFAULT_THRESHOLD = 0.4


class LexiconError(ValueError):
    pass


class UnknownPromptError(LookupError):
    def __init__(self, prompt: str, suggestions: list[str]):
        self.prompt = prompt
        self.suggestions = suggestions
        hint = ", ".join(suggestions) if suggestions else "(lexicon is empty)"
        super().__init__(f"unknown prompt {prompt!r}; nearest entries: {hint}")


def _levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _unit(vec: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise LexiconError(f"{what}: embedding has zero or non-finite norm")
    return v / n


@dataclass
class QueryLexicon:
    """Prompt and canonical embeddings, all unit L2 norm."""

    prompts: dict
    canonical: dict

    def __post_init__(self):
        for phrase in CANONICAL_PHRASES:
            if phrase not in self.canonical:
                raise LexiconError(f"lexicon is missing the canonical phrase {phrase!r}")
        self.prompts = {k: _unit(v, f"prompt {k!r}") for k, v in self.prompts.items()}
        self.canonical = {k: _unit(v, f"canonical {k!r}") for k, v in self.canonical.items()}
        dims = {v.shape[0] for v in self.prompts.values()}
        dims |= {v.shape[0] for v in self.canonical.values()}
        if len(dims) > 1:
            raise LexiconError(f"inconsistent embedding dimensions: {sorted(dims)}")

    @property
    def feature_dim(self) -> int:
        return next(iter(self.canonical.values())).shape[0]

    @property
    def canonical_matrix(self) -> np.ndarray:
        return np.stack([self.canonical[p] for p in CANONICAL_PHRASES])

    def suggestions(self, prompt: str, k: int = 3) -> list[str]:
        keys = sorted(self.prompts)
        keys.sort(key=lambda s: _levenshtein(prompt.lower(), s.lower()))
        return keys[:k]

    def embedding(self, prompt: str) -> np.ndarray:
        if prompt not in self.prompts:
            raise UnknownPromptError(prompt, self.suggestions(prompt))
        return self.prompts[prompt]


def load_lexicon(path: str) -> QueryLexicon:
    with open(path) as f:
        doc = json.load(f)
    if "canonical" not in doc or "prompts" not in doc:
        raise LexiconError("lexicon must contain 'canonical' and 'prompts' tables")
    return QueryLexicon(
        prompts={k: np.asarray(v, dtype=np.float64) for k, v in doc["prompts"].items()},
        canonical={k: np.asarray(v, dtype=np.float64) for k, v in doc["canonical"].items()},
    )


def save_lexicon(lex: QueryLexicon, path: str) -> None:
    doc = {
        "canonical": {k: v.tolist() for k, v in lex.canonical.items()},
        "prompts": {k: v.tolist() for k, v in lex.prompts.items()},
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def relevancy_score(img_embed: np.ndarray, text_embed: np.ndarray, canon: np.ndarray):
    """Score in (0,1); img_embed may be (..., D) batched. canon is 4 x D.

    Equivalent to min_i softmax2(f.p vs f.c_i); evaluated in the sigmoid
    form, which is exact and stable.
    """
    img = np.asarray(img_embed, dtype=np.float64)
    dt = img @ np.asarray(text_embed, dtype=np.float64)
    dc = img @ np.asarray(canon, dtype=np.float64).T
    worst = dc.max(axis=-1)
    return 1.0 / (1.0 + np.exp(worst - dt))


@dataclass
class QueryResult:
    relevancy: np.ndarray  # H x W float32 scores in (0,1)
    mask: np.ndarray       # H x W bool, relevancy >= threshold
    threshold: float
    prompt: str

    def heatmap_u8(self) -> np.ndarray:
        return np.clip(np.round(self.relevancy.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)

    def mask_u8(self) -> np.ndarray:
        return np.where(self.mask, 255, 0).astype(np.uint8)


def score_feature_map(
    feature_map: np.ndarray,
    codec: FeatureCodec,
    text_embed: np.ndarray,
    canon: np.ndarray,
) -> np.ndarray:
    """Decode a rendered H x W x d map pixelwise and score it; float32 out."""
    h, w, d = feature_map.shape
    flat = decode(codec, feature_map.reshape(-1, d))
    scores = relevancy_score(flat, text_embed, canon)
    return scores.reshape(h, w).astype(np.float32)


def query_frame(
    checkpoint,
    codec: FeatureCodec,
    lexicon: QueryLexicon,
    t: float,
    prompt: str | None = None,
    embedding: np.ndarray | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    camera: Camera | None = None,
) -> QueryResult:
    """Render, decode and score one view; mask = relevancy >= threshold.

    The prompt is resolved through the lexicon unless a raw embedding is
    supplied. Thresholding happens on the float32 score map, so a client
    re-thresholding the raw map gets the identical mask.
    """
    if prompt is not None:
        emb = lexicon.embedding(prompt)
        label = prompt
    elif embedding is not None:
        emb = _unit(embedding, "query embedding")
        label = "<embedding>"
    else:
        raise ValueError("either prompt or embedding is required")
    if camera is None:
        camera = Camera.from_dict(checkpoint.scene["camera"])
    out = render_scene(
        checkpoint.cloud,
        camera,
        field=checkpoint.field,
        t=t,
        track_features=checkpoint.config.enable_tracker,
    )
    scores = score_feature_map(out.feature, codec, emb, lexicon.canonical_matrix)
    mask = scores >= np.float32(threshold)
    return QueryResult(relevancy=scores, mask=mask, threshold=float(threshold), prompt=label)
