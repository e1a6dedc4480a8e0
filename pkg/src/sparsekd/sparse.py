"""Sparse inference path: CSR storage, sparse kernels, compression counters.

The CSR product and the dense reference product are deliberately the same
row-streaming loop (jitted, single-threaded), so measured throughput scales
with stored nonzeros rather than with BLAS-vs-naive kernel differences.
Output is deterministic: summation order is fixed by the storage order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numba
import numpy as np

from .encoder import EncoderConfig, EncoderParams, count_encoder_params
from .errors import ShapeError
from .pruning import PruneMask, compute_mask
from .tensor import Tensor


@dataclass
class CsrMatrix:
    """Compressed-sparse-row matrix: no explicit zeros are ever stored."""

    rows: int
    cols: int
    row_ptr: np.ndarray   # int64, len rows+1, non-decreasing
    col_idx: np.ndarray   # int64, strictly increasing within each row
    values: np.ndarray    # float64, one per stored entry

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        for i in range(self.rows):
            lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
            out[i, self.col_idx[lo:hi]] = self.values[lo:hi]
        return out


def to_csr(dense, mask=None) -> CsrMatrix:
    """CSR of the entries where the mask is 1 and the value is nonzero."""
    d = dense.data if isinstance(dense, Tensor) else np.asarray(dense, dtype=np.float64)
    if d.ndim != 2:
        raise ShapeError(f"to_csr expects a matrix, got shape {d.shape}")
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64)
        if m.shape != d.shape:
            raise ShapeError(f"mask shape {m.shape} does not match dense {d.shape}")
        keep = (m != 0.0) & (d != 0.0)
    else:
        keep = d != 0.0
    rows, cols = d.shape
    counts = keep.sum(axis=1)
    row_ptr = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    col_idx = np.nonzero(keep)[1].astype(np.int64)
    values = d[keep]
    return CsrMatrix(rows=rows, cols=cols, row_ptr=row_ptr, col_idx=col_idx, values=values)


@numba.njit(cache=True)
def _csr_matmul_kernel(row_ptr, col_idx, values, b, out):  # pragma: no cover
    for i in range(out.shape[0]):
        for p in range(row_ptr[i], row_ptr[i + 1]):
            v = values[p]
            c = col_idx[p]
            for j in range(b.shape[1]):
                out[i, j] += v * b[c, j]


@numba.njit(cache=True)
def _dense_matmul_kernel(a, b, out):  # pragma: no cover
    for i in range(a.shape[0]):
        for c in range(a.shape[1]):
            v = a[i, c]
            for j in range(b.shape[1]):
                out[i, j] += v * b[c, j]


def spmm(a: CsrMatrix, b) -> np.ndarray:
    """Sparse-dense product equal to ``to_dense(a) @ b``."""
    b = np.ascontiguousarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] != a.cols:
        raise ShapeError(f"spmm: csr {a.rows}x{a.cols} incompatible with {b.shape}")
    out = np.zeros((a.rows, b.shape[1]))
    _csr_matmul_kernel(a.row_ptr, a.col_idx, a.values, b, out)
    return out


def dense_rowstream_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense product through the same row-streaming loop as the CSR kernel."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    _dense_matmul_kernel(a, b, out)
    return out


# ---------------------------------------------------------------------------
# inference engine over CSR weights
# ---------------------------------------------------------------------------

class SparseEncoder:
    """Inference-only encoder whose prunable matrices run through the sparse
    kernel (or the matching dense row-stream kernel when unmasked)."""

    def __init__(self, params: EncoderParams, mask: PruneMask | None = None):
        self.params = params
        self.cfg = params.config
        self.weights: dict[str, CsrMatrix | np.ndarray] = {}
        masks = mask.masks if mask is not None else {}
        for name, w in params.prunable().items():
            m = masks.get(name)
            if m is None:
                # transposed so the row-stream kernel walks output features
                self.weights[name] = np.ascontiguousarray(w.data.T)
            else:
                self.weights[name] = to_csr(w.data.T, m.T)

    def _project(self, name: str, x: np.ndarray, bias: np.ndarray) -> np.ndarray:
        w = self.weights[name]
        xt = np.ascontiguousarray(x.T)
        if isinstance(w, CsrMatrix):
            y = spmm(w, xt).T
        else:
            y = dense_rowstream_matmul(w, xt).T
        return y + bias

    def forward(self, token_ids: np.ndarray) -> np.ndarray:
        """Classifier logits for a batch; matches the training-path forward."""
        p, cfg = self.params, self.cfg
        ids = np.asarray(token_ids)
        batch, seq = ids.shape
        h, heads, d = cfg.hidden_size, cfg.num_heads, cfg.head_dim
        x = p.tok_emb.data[ids] + p.pos_emb.data[:seq] + p.seg_emb.data[0]
        x = _np_layer_norm(x, p.emb_ln_g.data, p.emb_ln_b.data)
        flat = x.reshape(batch * seq, h)
        for i, lp in enumerate(p.layers):
            q = self._project(f"layer{i}.wq", flat, lp.bq.data)
            k = self._project(f"layer{i}.wk", flat, lp.bk.data)
            v = self._project(f"layer{i}.wv", flat, lp.bv.data)
            q = q.reshape(batch, seq, heads, d).transpose(0, 2, 1, 3)
            k = k.reshape(batch, seq, heads, d).transpose(0, 2, 1, 3)
            v = v.reshape(batch, seq, heads, d).transpose(0, 2, 1, 3)
            scores = np.matmul(q, np.swapaxes(k, -1, -2)) / np.sqrt(d)
            probs = _np_softmax(scores)
            ctx = np.matmul(probs, v).transpose(0, 2, 1, 3).reshape(batch * seq, h)
            attn = self._project(f"layer{i}.wo", ctx, lp.bo.data)
            flat = _np_layer_norm(flat + attn, lp.ln1_g.data, lp.ln1_b.data)
            ffn = _np_gelu(self._project(f"layer{i}.w1", flat, lp.b1.data))
            ffn = self._project(f"layer{i}.w2", ffn, lp.b2.data)
            flat = _np_layer_norm(flat + ffn, lp.ln2_g.data, lp.ln2_b.data)
        x = flat.reshape(batch, seq, h)
        pooled = np.tanh(x[:, 0, :] @ p.pooler_w.data + p.pooler_b.data)
        return pooled @ p.cls_w.data + p.cls_b.data


def _np_softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _np_layer_norm(x, g, b, eps=1e-12):
    mean = x.mean(axis=-1, keepdims=True)
    c = x - mean
    var = (c * c).mean(axis=-1, keepdims=True)
    return c / np.sqrt(var + eps) * g + b


def _np_gelu(x):
    from .tensor import _std_normal_cdf
    return x * _std_normal_cdf(x)


# ---------------------------------------------------------------------------
# compression accounting
# ---------------------------------------------------------------------------

@dataclass
class CompressionReport:
    """Parameter and FLOP totals plus compression ratios.

    Totals cover every encoder matrix product (attention score/context
    products stay dense).  The compression ratios are computed over the
    prunable weight matrices alone - the only part a mask can shrink - so
    they are sequence-length independent and equal 1/(1-s) for uniform
    sparsity s up to one-weight quantization.  The FLOP convention is
    echoed in ``flops_per_mac``.
    """

    params_dense: int
    params_sparse: int
    flops_dense: int
    flops_sparse: int
    param_compression_ratio: float
    flops_compression_ratio: float
    flops_per_mac: int
    seq_len: int
    prunable_params_dense: int
    prunable_params_nnz: int
    per_layer: list[dict] = field(default_factory=list)
    convention: str = (
        "ratios over prunable weight matrices; totals include attention "
        "products and the task head"
    )


def _prunable_shapes(cfg: EncoderConfig) -> list[tuple[str, int, int]]:
    h, inter = cfg.hidden_size, cfg.intermediate_size
    return [
        ("wq", h, h), ("wk", h, h), ("wv", h, h), ("wo", h, h),
        ("w1", h, inter), ("w2", inter, h),
    ]


def count_flops(
    cfg: EncoderConfig,
    seq_len: int,
    mask: PruneMask | None = None,
    uniform_sparsity: float | None = None,
    flops_per_mac: int = 2,
) -> CompressionReport:
    """MAC-derived FLOPs of one sequence through the encoder.

    Weight matmuls cost ``seq_len * nnz`` MACs each (full density without a
    mask); attention score and context products are always dense.  Either a
    concrete mask or an analytic ``uniform_sparsity`` (floor(s*n) zeros per
    matrix) may supply the nonzero counts.
    """
    if mask is not None and uniform_sparsity is not None:
        raise ShapeError("pass either mask or uniform_sparsity, not both")
    h = cfg.hidden_size
    masks = mask.masks if mask is not None else None
    per_layer = []
    weight_dense_macs = 0
    weight_sparse_macs = 0
    prunable_dense = 0
    prunable_nnz = 0
    attn_macs_layer = 2 * seq_len * seq_len * h  # QK^T plus probs@V, all heads
    for i in range(cfg.num_layers):
        layer_dense = 0
        layer_nnz = 0
        for slot, r, c in _prunable_shapes(cfg):
            n = r * c
            if masks is not None:
                nnz = int(masks[f"layer{i}.{slot}"].sum())
            elif uniform_sparsity is not None:
                nnz = n - int(np.floor(uniform_sparsity * n))
            else:
                nnz = n
            layer_dense += n
            layer_nnz += nnz
        prunable_dense += layer_dense
        prunable_nnz += layer_nnz
        weight_dense_macs += seq_len * layer_dense
        weight_sparse_macs += seq_len * layer_nnz
        per_layer.append({
            "layer": i,
            "dense_weights": layer_dense,
            "nnz_weights": layer_nnz,
            "weight_macs_dense": seq_len * layer_dense,
            "weight_macs_sparse": seq_len * layer_nnz,
            "attention_macs": attn_macs_layer,
        })
    head_macs = h * h + h * cfg.num_labels  # pooler + classifier, first token only
    attn_total = cfg.num_layers * attn_macs_layer
    flops_dense = flops_per_mac * (weight_dense_macs + attn_total + head_macs)
    flops_sparse = flops_per_mac * (weight_sparse_macs + attn_total + head_macs)
    backbone = count_encoder_params(cfg)["backbone_total"]
    params_dense = backbone
    params_sparse = backbone - (prunable_dense - prunable_nnz)
    return CompressionReport(
        params_dense=params_dense,
        params_sparse=params_sparse,
        flops_dense=flops_dense,
        flops_sparse=flops_sparse,
        param_compression_ratio=prunable_dense / max(prunable_nnz, 1),
        flops_compression_ratio=weight_dense_macs / max(weight_sparse_macs, 1),
        flops_per_mac=flops_per_mac,
        seq_len=seq_len,
        prunable_params_dense=prunable_dense,
        prunable_params_nnz=prunable_nnz,
        per_layer=per_layer,
    )


# ---------------------------------------------------------------------------
# throughput benchmark
# ---------------------------------------------------------------------------

def warm_up_kernels() -> None:
    """Trigger JIT compilation outside the timed region."""
    m = to_csr(np.eye(4))
    spmm(m, np.ones((4, 2)))
    dense_rowstream_matmul(np.eye(4), np.ones((4, 2)))


def benchmark_throughput(
    params: EncoderParams,
    batch_size: int,
    seq_len: int,
    ratios,
    repeats: int = 5,
    warmup: int = 2,
    seed: int = 0,
) -> list[dict]:
    """Sentences/second of the sparse forward path at each compression ratio.

    Ratio r maps to sparsity 1 - 1/r; masks come from current magnitudes.
    Each row reports the median of ``repeats`` timed forward passes after
    ``warmup`` discarded ones.
    """
    warm_up_kernels()
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, params.config.vocab_size, size=(batch_size, seq_len))
    rows = []
    for ratio in ratios:
        if ratio < 1:
            raise ShapeError(f"compression ratio must be >= 1, got {ratio}")
        sparsity = 1.0 - 1.0 / ratio
        mask = compute_mask(params, sparsity) if sparsity > 0 else None
        engine = SparseEncoder(params, mask)
        for _ in range(warmup):
            engine.forward(tokens)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            engine.forward(tokens)
            times.append(time.perf_counter() - t0)
        median = float(np.median(times))
        rows.append({
            "ratio": float(ratio),
            "sparsity": sparsity,
            "sps": batch_size / median,
            "median_ms": median * 1000.0,
        })
    return rows


def benchmark_csv(rows) -> str:
    lines = ["ratio,sparsity,sps,median_ms"]
    for r in rows:
        lines.append(f"{r['ratio']:g},{r['sparsity']:.6f},{r['sps']:.3f},{r['median_ms']:.3f}")
    return "\n".join(lines) + "\n"
