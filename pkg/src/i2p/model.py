"""The masked-autoencoding network.

Single-sample graphs: a mini-PointNet embeds k-NN groups into tokens, a
hierarchical pre-norm transformer encodes only the visible tokens (stages
shrink the token set by furthest point sampling), and a lightweight decoder
mixes the encoded tokens with a shared learnable mask token over the full
token set. Two linear heads reconstruct masked 3D group coordinates and
per-token 2D semantics.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .guidance import MaskPartition, combine_targets, target_width
from .losses import assignment_terms, chamfer_loss, semantic_loss, total_loss
from .pointcloud import _fps_greedy


def init_params(cfg, seed: int) -> dict[str, Tensor]:
    """Draw all learnable parameters; weights N(0, 0.02), biases zero."""
    rng = np.random.default_rng(seed)
    c = cfg.channels
    hidden = int(c * cfg.mlp_ratio)
    params: dict[str, Tensor] = {}

    def gauss(name, shape, std=0.02):
        params[name] = Tensor(rng.normal(scale=std, size=shape), requires_grad=True)

    def zeros(name, shape):
        params[name] = Tensor(np.zeros(shape), requires_grad=True)

    def ones(name, shape):
        params[name] = Tensor(np.ones(shape), requires_grad=True)

    def block(prefix):
        for nm in ("ln1", "ln2"):
            ones(f"{prefix}.{nm}.g", (c,))
            zeros(f"{prefix}.{nm}.b", (c,))
        for nm in ("wq", "wk", "wv", "wo"):
            gauss(f"{prefix}.attn.{nm}", (c, c))
        for nm in ("bq", "bk", "bv", "bo"):
            zeros(f"{prefix}.attn.{nm}", (c,))
        gauss(f"{prefix}.mlp.w1", (c, hidden))
        zeros(f"{prefix}.mlp.b1", (hidden,))
        gauss(f"{prefix}.mlp.w2", (hidden, c))
        zeros(f"{prefix}.mlp.b2", (c,))

    mid = max(c // 2, 1)
    gauss("embed.lin1.w", (3, mid))
    zeros("embed.lin1.b", (mid,))
    gauss("embed.lin2.w", (mid, c))
    zeros("embed.lin2.b", (c,))
    for si, nblocks in enumerate(cfg.encoder_blocks):
        gauss(f"enc.pos{si}.w", (3, c))
        zeros(f"enc.pos{si}.b", (c,))
        for bi in range(nblocks):
            block(f"enc.s{si}.b{bi}")
    ones("enc.norm.g", (c,))
    zeros("enc.norm.b", (c,))
    for si, nblocks in enumerate(cfg.decoder_blocks):
        gauss(f"dec.pos{si}.w", (3, c))
        zeros(f"dec.pos{si}.b", (c,))
        for bi in range(nblocks):
            block(f"dec.s{si}.b{bi}")
    ones("dec.norm.g", (c,))
    zeros("dec.norm.b", (c,))
    gauss("mask_token", (1, c))
    gauss("head3d.w", (c, cfg.neighbors * 3))
    zeros("head3d.b", (cfg.neighbors * 3,))
    wt = target_width(cfg.views, c, cfg.tgt_agg)
    gauss("head2d.w", (c, wt))
    zeros("head2d.b", (wt,))
    return params


def _ln(params, prefix: str, x: Tensor) -> Tensor:
    return ad.mul(ad.layer_norm(x), params[f"{prefix}.g"]) + params[f"{prefix}.b"]


def _attention(params, prefix: str, x: Tensor, heads: int) -> Tensor:
    m, c = x.shape
    dh = c // heads
    q = ad.linear(x, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k = ad.linear(x, params[f"{prefix}.wk"], params[f"{prefix}.bk"])
    v = ad.linear(x, params[f"{prefix}.wv"], params[f"{prefix}.bv"])
    q = ad.transpose(ad.reshape(q, (m, heads, dh)), (1, 0, 2))
    k = ad.transpose(ad.reshape(k, (m, heads, dh)), (1, 0, 2))
    v = ad.transpose(ad.reshape(v, (m, heads, dh)), (1, 0, 2))
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    ctx = ad.matmul(ad.softmax(scores, axis=-1), v)
    ctx = ad.reshape(ad.transpose(ctx, (1, 0, 2)), (m, c))
    return ad.linear(ctx, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def _mlp(params, prefix: str, x: Tensor) -> Tensor:
    h = ad.gelu(ad.linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return ad.linear(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _block(params, prefix: str, x: Tensor, heads: int) -> Tensor:
    x = x + _attention(params, f"{prefix}.attn", _ln(params, f"{prefix}.ln1", x), heads)
    return x + _mlp(params, f"{prefix}.mlp", _ln(params, f"{prefix}.ln2", x))


def embed_tokens(params, group_coords: np.ndarray) -> Tensor:
    """Shared 2-layer point MLP + max-pool over each k-group → m×C tokens."""
    m, k, _ = group_coords.shape
    flat = Tensor(group_coords.reshape(m * k, 3))
    h = ad.gelu(ad.linear(flat, params["embed.lin1.w"], params["embed.lin1.b"]))
    h = ad.linear(h, params["embed.lin2.w"], params["embed.lin2.b"])
    return ad.amax(ad.reshape(h, (m, k, h.shape[1])), axis=1)


def _stage_counts(cfg, m0: int) -> list[int]:
    """Per-stage token counts scaled to the number of input rows."""
    if not cfg.hierarchical:
        return [m0] * len(cfg.encoder_blocks)
    return [max(1, (t * m0) // cfg.tokens) for t in cfg.stage_tokens]


def encode_stages(params, cfg, feats: Tensor, centers: np.ndarray):
    """Run the hierarchical encoder.

    Returns per-stage outputs and, per stage, the row ids (into the input
    rows) each stage's tokens correspond to.
    """
    counts = _stage_counts(cfg, feats.shape[0])
    ids = np.arange(feats.shape[0], dtype=np.intp)
    cur_centers = centers
    x = feats
    outs, id_list = [], []
    for si, nblocks in enumerate(cfg.encoder_blocks):
        pos = ad.linear(Tensor(cur_centers), params[f"enc.pos{si}.w"], params[f"enc.pos{si}.b"])
        x = x + pos
        for bi in range(nblocks):
            x = _block(params, f"enc.s{si}.b{bi}", x, cfg.heads)
        outs.append(x)
        id_list.append(ids)
        nxt = si + 1
        if nxt < len(cfg.encoder_blocks) and counts[nxt] < ids.size:
            sel = np.sort(_fps_greedy(cur_centers, counts[nxt], start=0))
            x = ad.gather(x, sel)
            cur_centers = cur_centers[sel]
            ids = ids[sel]
    return outs, id_list


def restore_finest(outs: list[Tensor], id_list: list[np.ndarray]) -> Tensor:
    """Undo the stage selections: every input row gets the feature from the
    last stage it survived to."""
    parts, part_ids = [], []
    for s in range(len(outs) - 1):
        dropped = ~np.isin(id_list[s], id_list[s + 1])
        if dropped.any():
            parts.append(ad.gather(outs[s], np.flatnonzero(dropped)))
            part_ids.append(id_list[s][dropped])
    parts.append(outs[-1])
    part_ids.append(id_list[-1])
    if len(parts) == 1:
        return parts[0]
    all_ids = np.concatenate(part_ids)
    inv = np.argsort(all_ids, kind="stable")
    return ad.gather(ad.concat(parts, axis=0), inv)


def encode_visible(params, cfg, feats: Tensor, centers: np.ndarray) -> Tensor:
    """Encoder output restored to one row per input token, final-norm applied."""
    outs, id_list = encode_stages(params, cfg, feats, centers)
    return _ln(params, "enc.norm", restore_finest(outs, id_list))


def encode_pooled(params, cfg, feats: Tensor, centers: np.ndarray) -> Tensor:
    """Final-stage (coarsest) tokens after the encoder norm, for probing."""
    outs, _ = encode_stages(params, cfg, feats, centers)
    return _ln(params, "enc.norm", outs[-1])


def decode(params, cfg, vis_tokens: Tensor, centers: np.ndarray,
           partition: MaskPartition) -> Tensor:
    """Full-token decoder pass; output row t corresponds to token t."""
    m_mask = partition.m_mask
    mask_block = ad.broadcast_rows(params["mask_token"], m_mask)
    rows = ad.concat([vis_tokens, mask_block], axis=0)
    perm = np.concatenate([partition.visible_idx, partition.masked_idx])
    x = ad.gather(rows, np.argsort(perm, kind="stable"))
    for si, nblocks in enumerate(cfg.decoder_blocks):
        pos = ad.linear(Tensor(centers), params[f"dec.pos{si}.w"], params[f"dec.pos{si}.b"])
        x = x + pos
        for bi in range(nblocks):
            x = _block(params, f"dec.s{si}.b{bi}", x, cfg.heads)
    return _ln(params, "dec.norm", x)


def head_3d(params, decoded_masked: Tensor, k: int) -> Tensor:
    """Linear projection to k coordinate triples per masked token."""
    out = ad.linear(decoded_masked, params["head3d.w"], params["head3d.b"])
    return ad.reshape(out, (decoded_masked.shape[0], k, 3))


def head_2d(params, decoded_rows: Tensor) -> Tensor:
    return ad.linear(decoded_rows, params["head2d.w"], params["head2d.b"])


def mae_forward(params, cfg, centers: np.ndarray, groups: np.ndarray,
                feats2d: np.ndarray | None, partition: MaskPartition,
                assignment: str | None = None) -> dict[str, Tensor | None]:
    """One pre-training forward pass; returns the loss terms and their sum.

    ``centers``: M×3 token centers, ``groups``: M×k×3 re-centered neighbor
    coordinates (embedding input and 3D reconstruction target), ``feats2d``:
    V×M×C back-projected 2D features (may be None for 3D-only assignments).
    """
    assignment = assignment or cfg.assignment
    use_3d, rows_2d = assignment_terms(assignment)
    vis, msk = partition.visible_idx, partition.masked_idx

    tokens_vis = embed_tokens(params, groups[vis])
    encoded = encode_visible(params, cfg, tokens_vis, centers[vis])
    decoded = decode(params, cfg, encoded, centers, partition)

    l3d = None
    if use_3d:
        if msk.size:
            pred3 = head_3d(params, ad.gather(decoded, msk), cfg.neighbors)
            l3d = chamfer_loss(pred3, groups[msk])
        else:
            l3d = Tensor(0.0)
    l2d = None
    if rows_2d is not None:
        rows = vis if rows_2d == "visible" else msk
        pred2 = head_2d(params, ad.gather(decoded, rows))
        target = combine_targets(feats2d[:, rows], cfg.tgt_agg)
        l2d = semantic_loss(pred2, target)
    total = total_loss(l3d, l2d, assignment, cfg.weight_3d, cfg.weight_2d)
    return {"loss_3d": l3d, "loss_2d": l2d, "loss_total": total}
