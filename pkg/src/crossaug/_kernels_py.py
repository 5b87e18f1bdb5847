"""Vectorised numpy implementations of the hot loss kernels.

Signatures mirror the compiled ``_kernels`` extension exactly so
:mod:`crossaug.kernels` can swap one for the other.
"""
import numpy as np

HARDEST = 0
ALL_PAIRS = 1
EPS = 1e-12


def triplet_forward_backward(img, txt, labels, margin, mining):
    """Bidirectional cosine triplet hinge over a paired batch.

    Returns ``(loss, grad_img, grad_txt, n_anchors)``. Row ``i`` of ``img``
    and ``txt`` form a positive pair; rows with a different label are
    negatives. Loss is averaged over anchors that have at least one negative.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    txt = np.ascontiguousarray(txt, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = img.shape[0]
    ni = np.sqrt(np.einsum("ij,ij->i", img, img))
    nt = np.sqrt(np.einsum("ij,ij->i", txt, txt))
    if (ni <= EPS).any() or (nt <= EPS).any():
        raise ValueError("zero-norm embedding in triplet batch")
    a = img / ni[:, None]
    b = txt / nt[:, None]
    sim = np.clip(a @ b.T, -1.0, 1.0)  # sim[i, j] = c(img_i, txt_j)
    pos = np.diag(sim).copy()
    neg = labels[:, None] != labels[None, :]
    valid = neg.any(axis=1)
    n_anchors = int(valid.sum())
    grad_sim = np.zeros((n, n))
    if n_anchors == 0:
        return 0.0, np.zeros_like(img), np.zeros_like(txt), 0
    w = 1.0 / n_anchors
    rows = np.flatnonzero(valid)

    if mining == HARDEST:
        masked = np.where(neg, sim, -np.inf)
        j_img = np.argmax(masked, axis=1)  # hardest text for image anchor i
        j_txt = np.argmax(masked, axis=0)  # hardest image for text anchor i
        h_img = sim[np.arange(n), j_img] - pos + margin
        h_txt = sim[j_txt, np.arange(n)] - pos + margin
        act_img = valid & (h_img > 0)
        act_txt = valid & (h_txt > 0)
        loss = (np.where(act_img, h_img, 0.0).sum() + np.where(act_txt, h_txt, 0.0).sum()) * w
        ai = np.flatnonzero(act_img)
        at = np.flatnonzero(act_txt)
        np.add.at(grad_sim, (ai, j_img[ai]), w)
        np.add.at(grad_sim, (j_txt[at], at), w)
        diag = -(act_img.astype(np.float64) + act_txt.astype(np.float64)) * w
    else:
        cnt = neg.sum(axis=1).astype(np.float64)
        cnt_safe = np.where(cnt > 0, cnt, 1.0)
        h_img = sim - pos[:, None] + margin
        h_txt = sim - pos[None, :] + margin  # h_txt[j, i]: image j negative for text anchor i
        act_img = neg & (h_img > 0)
        act_txt = neg & (h_txt > 0)
        loss = (np.where(act_img, h_img, 0.0).sum(axis=1)[rows] / cnt_safe[rows]).sum() * w
        loss += (np.where(act_txt, h_txt, 0.0).sum(axis=0)[rows] / cnt_safe[rows]).sum() * w
        gi = act_img * (w / cnt_safe)[:, None]
        gt = act_txt * (w / cnt_safe)[None, :]
        grad_sim += gi + gt
        diag = -(gi.sum(axis=1) + gt.sum(axis=0))
    grad_sim[np.arange(n), np.arange(n)] += diag

    da = grad_sim @ b
    db = grad_sim.T @ a
    grad_img = (da - a * np.einsum("ij,ij->i", a, da)[:, None]) / ni[:, None]
    grad_txt = (db - b * np.einsum("ij,ij->i", b, db)[:, None]) / nt[:, None]
    return float(loss), grad_img, grad_txt, n_anchors


def balanced_softmax_forward_backward(logits, labels, log_counts):
    """Mean balanced-softmax cross-entropy over rows and its logit gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits + np.asarray(log_counts, dtype=np.float64)[None, :]
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(z.shape[0])
    per_row = np.log(s[:, 0]) + m[:, 0] - z[rows, labels]
    grad = e / s
    grad[rows, labels] -= 1.0
    n = z.shape[0]
    return float(per_row.sum() / n), grad / n
