"""Small hand-written SVG figures (no plotting dependency)."""

from __future__ import annotations

import numpy as np

from .geometry import SymmetryPlane, in_plane_basis, plane_points

_W, _H, _PAD = 640, 480, 30


def _fmt(x: float) -> str:
    return f"{x:.2f}"


class _Canvas:
    def __init__(self, xlim, ylim, width=_W, height=_H, pad=_PAD):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        self.w, self.h, self.pad = width, height, pad
        self.items = []

    def sx(self, x):
        return self.pad + (np.asarray(x) - self.x0) / (self.x1 - self.x0) * (self.w - 2 * self.pad)

    def sy(self, y):
        return self.h - self.pad - (np.asarray(y) - self.y0) / (self.y1 - self.y0) * (self.h - 2 * self.pad)

    def circles(self, X, Y, r, color, opacity=1.0):
        for a, b in zip(self.sx(X), self.sy(Y)):
            self.items.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="{r}" fill="{color}" fill-opacity="{opacity}"/>')

    def line(self, xa, ya, xb, yb, color, width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(
            f'<line x1="{_fmt(self.sx(xa))}" y1="{_fmt(self.sy(ya))}" x2="{_fmt(self.sx(xb))}" '
            f'y2="{_fmt(self.sy(yb))}" stroke="{color}" stroke-width="{width}"{d}/>'
        )

    def polyline(self, X, Y, color, width=1.5):
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(self.sx(X), self.sy(Y)))
        self.items.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def text(self, x, y, s, size=12, anchor="start", raw=False):
        px, py = (x, y) if raw else (self.sx(x), self.sy(y))
        self.items.append(f'<text x="{_fmt(px)}" y="{_fmt(py)}" font-size="{size}" '
                          f'font-family="sans-serif" text-anchor="{anchor}">{s}</text>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">\n<rect width="100%" height="100%" fill="white"/>\n')
        return head + "\n".join(self.items) + "\n</svg>\n"


def detection_svg(points, plane: SymmetryPlane, keypoints=None, pairs=None,
                  max_points: int = 3000, title: str = "") -> str:
    """Cloud seen along an in-plane axis, so the plane is the vertical red line.

    Gray dots are cloud points, red dots the three sampled plane points and
    blue segments the matched pairs.
    """
    P = np.asarray(points, dtype=float)
    v = plane.normal
    u, w = in_plane_basis(v)
    if len(P) > max_points:
        P = P[np.linspace(0, len(P) - 1, max_points).round().astype(np.int64)]
    X, Y = P @ v, P @ w
    span = max(np.ptp(X), np.ptp(Y), 1e-12)
    cx, cy = 0.5 * (X.max() + X.min()), 0.5 * (Y.max() + Y.min())
    half = 0.55 * span
    aspect = _W / _H
    c = _Canvas((cx - half * aspect, cx + half * aspect), (cy - half, cy + half))
    c.circles(X, Y, 1.2, "#888888", 0.6)
    pts = np.asarray(points, dtype=float)
    if pairs is not None:
        for i, j in np.asarray(pairs).reshape(-1, 2):
            a, b = pts[i], pts[j]
            c.line(a @ v, a @ w, b @ v, b @ w, "#1f5fd1", 0.8)
    if keypoints is not None and len(keypoints):
        K = pts[np.asarray(keypoints, dtype=np.int64)]
        c.circles(K @ v, K @ w, 2.0, "#1f5fd1")
    c.line(plane.offset, cy - half, plane.offset, cy + half, "#d62728", 1.2, dash="6,4")
    Q = plane_points(plane, pts.mean(axis=0), 0.25 * span)
    c.circles(Q @ v, Q @ w, 4, "#d62728")
    if title:
        c.text(_W / 2, 18, title, 14, "middle", raw=True)
    return c.render()


def pr_curve_svg(recall, precision, fscore_by_angle=None, title: str = "precision / recall") -> str:
    c = _Canvas((-0.05, 1.05), (-0.05, 1.05))
    c.line(0, 0, 1, 0, "black")
    c.line(0, 0, 0, 1, "black")
    for t in (0.0, 0.5, 1.0):
        c.text(t, -0.045, f"{t:.1f}", 10, "middle")
        c.text(-0.03, t, f"{t:.1f}", 10, "end")
    r = np.asarray(recall, dtype=float)
    p = np.asarray(precision, dtype=float)
    c.polyline(r, p, "#1f5fd1", 2.0)
    c.circles(r, p, 2.5, "#1f5fd1")
    if fscore_by_angle is not None:
        ang, f = (np.asarray(a, dtype=float) for a in fscore_by_angle)
        c.polyline(ang / max(ang.max(), 1e-12), f, "#d62728", 1.5)
        c.text(0.98, 0.05, "red: F-score vs t_a (scaled to [0, 1])", 11, "end")
    c.text(0.5, 1.03, "recall (x) vs precision (y)", 12, "middle")
    c.text(_W / 2, 16, title, 14, "middle", raw=True)
    return c.render()


def write_svg(path, svg: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
