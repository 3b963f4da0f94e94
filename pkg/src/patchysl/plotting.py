"""File-only figures: matplotlib PNGs and dependency-free PPM heatmaps."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import ScalarField

# distinct colours for patch labels (boundary/unlabelled nodes are grey)
_PATCH_COLOURS = np.array([
    [31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40],
    [148, 103, 189], [140, 86, 75], [227, 119, 194], [188, 189, 34],
    [23, 190, 207], [127, 127, 127],
], dtype=np.uint8)
_GREY = np.array([200, 200, 200], dtype=np.uint8)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


# ---------------------------------------------------------------- PPM


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary P6 pixmap from an ``(rows, cols, 3)`` uint8 array."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an (rows, cols, 3) array")
    rows, cols, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    cols, rows, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PPM is supported")
    return np.frombuffer(parts[4][: rows * cols * 3], dtype=np.uint8).reshape(rows, cols, 3)


def field_rgb(field: ScalarField, cmap: str = "viridis") -> np.ndarray:
    """Colour-mapped image of a field; row 0 is the top of the box."""
    from matplotlib import colormaps

    img = field.as_image()
    finite = np.isfinite(img)
    lo, hi = (float(img[finite].min()), float(img[finite].max())) if finite.any() else (0.0, 1.0)
    scaled = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    rgb = colormaps[cmap](np.nan_to_num(scaled, nan=0.0))[..., :3]
    return (rgb * 255).round().astype(np.uint8)


def labels_rgb(labels: np.ndarray, n: int) -> np.ndarray:
    lab = np.asarray(labels).reshape(n, n)
    out = np.empty((n, n, 3), dtype=np.uint8)
    out[:] = _GREY
    ok = lab >= 0
    out[ok] = _PATCH_COLOURS[lab[ok] % len(_PATCH_COLOURS)]
    return out


def write_field_ppm(path, field: ScalarField) -> None:
    write_ppm(path, field_rgb(field))


def write_labels_ppm(path, labels: np.ndarray, n: int) -> None:
    write_ppm(path, labels_rgb(labels, n))


# ---------------------------------------------------------------- PNG


def plot_field(path, field: ScalarField, title: str = "", levels: int = 20) -> None:
    """Filled contour plot of a field."""
    plt = _pyplot()
    g = field.grid
    xs, ys = g.x_coords, g.y_coords
    fig, ax = plt.subplots(figsize=(5, 4.2))
    cs = ax.contourf(xs, ys, field.as_image(), levels=levels, cmap="viridis")
    ax.contour(xs, ys, field.as_image(), levels=levels, colors="k", linewidths=0.3)
    fig.colorbar(cs, ax=ax)
    ax.set_aspect("equal")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_patches(path, labels: np.ndarray, grid, title: str = "") -> None:
    """Patch map with one colour per label."""
    plt = _pyplot()
    rgb = labels_rgb(labels, grid.n)
    lo, up = grid.lower, grid.upper
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.imshow(rgb, extent=(lo[0], up[0], lo[1], up[1]), interpolation="nearest")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bench(path, rows: list[dict], title: str = "") -> None:
    """Iterations against eps, one line per (grid, method); dashed lines at the regime threshold."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    keys = sorted({(r["grid_n"], r["method"]) for r in rows})
    thresholds = {}
    for n, method in keys:
        sel = [r for r in rows if r["grid_n"] == n and r["method"] == method
               and r["iterations"] is not None]
        sel.sort(key=lambda r: r["eps"])
        if not sel:
            continue
        eps = [max(r["eps"], 1e-12) for r in sel]
        ax.plot(eps, [r["iterations"] for r in sel], marker="o", label=f"{method} N={n}")
        thresholds[n] = sel[0]["eps_threshold"]
    for n, t in thresholds.items():
        ax.axvline(t, color="grey", linestyle="--", linewidth=0.8)
        ax.annotate(f"N={n}", (t, ax.get_ylim()[1]), rotation=90, va="top", fontsize=7)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("eps")
    ax.set_ylabel("iterations")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
