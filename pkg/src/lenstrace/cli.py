"""Command line entry points.

Subcommands::

    lenstrace psf build   --config LENS.json --grid RxC --out CACHE.psfg
    lenstrace psf verify  --config LENS.json --cache CACHE.psfg
    lenstrace simulate IMG --config LENS.json --cache CACHE.psfg --out OUT.png
    lenstrace dataset MANIFEST.json
    lenstrace metrics A.png B.png
    lenstrace plot {mtf,strehl,ca} --config LENS.json --cache CACHE.psfg --out DIR

Exit status is 0 on success; failures report on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np


def _parse_grid(text: str):
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError:
        raise argparse.ArgumentTypeError("grid must look like ROWSxCOLS, e.g. 6x8")


def _add_common(sub):
    sub.add_argument("--threads", type=int, default=None,
                     help="worker threads for the PSF superposition")
    sub.add_argument("--seed", type=int, default=0, help="random seed")


def _set_threads(args):
    if getattr(args, "threads", None):
        import numba

        numba.set_num_threads(max(1, args.threads))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lenstrace",
        description="Lens-to-sensor imaging simulation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    psf = sub.add_parser("psf", help="build or verify PSF grid caches")
    psf_sub = psf.add_subparsers(dest="psf_command", required=True)
    b = psf_sub.add_parser("build", help="compute a PSF grid and cache it")
    b.add_argument("--config", required=True, help="lens/sensor prescription JSON")
    b.add_argument("--grid", type=_parse_grid, required=True, metavar="RxC")
    b.add_argument("--out", required=True, help="output cache path")
    b.add_argument("--pupil-samples", type=int, default=64)
    _add_common(b)
    v = psf_sub.add_parser("verify", help="checksum and spot-check a cache")
    v.add_argument("--config", required=True)
    v.add_argument("--cache", required=True)
    v.add_argument("--pupil-samples", type=int, default=64)
    v.add_argument("--fraction", type=float, default=0.01)
    _add_common(v)

    sim = sub.add_parser("simulate", help="render one degraded exposure")
    sim.add_argument("image", help="clean sRGB input image")
    sim.add_argument("--config", required=True)
    sim.add_argument("--cache", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--bits", type=int, default=8, choices=(8, 16))
    sim.add_argument("--zero-noise", action="store_true")
    sim.add_argument("--dump-energy", default=None,
                     help="write the pre-mosaic energy image to this path")
    _add_common(sim)

    ds = sub.add_parser("dataset", help="generate aligned training pairs")
    ds.add_argument("manifest", help="dataset manifest JSON")
    _add_common(ds)

    met = sub.add_parser("metrics", help="PSNR/SSIM between two images")
    met.add_argument("image_a")
    met.add_argument("image_b")

    plot = sub.add_parser("plot", help="emit metric curves as CSV and figures")
    plot.add_argument("kind", choices=("mtf", "strehl", "ca"))
    plot.add_argument("--config", required=True)
    plot.add_argument("--cache", default=None,
                      help="PSF cache (required for mtf and ca)")
    plot.add_argument("--out", required=True, help="output directory")
    _add_common(plot)
    return parser


def _cmd_psf_build(args) -> int:
    from .dataset import build_psf_cache
    from .lens import load_prescription

    _set_threads(args)
    prescription = load_prescription(args.config)
    t0 = time.time()
    grid = build_psf_cache(prescription, args.grid, args.out,
                           pupil_samples=args.pupil_samples)
    print(f"built {grid.rows}x{grid.cols} grid "
          f"(max kernel {grid.max_kernel} px) in {time.time() - t0:.1f} s "
          f"-> {args.out}")
    return 0


def _cmd_psf_verify(args) -> int:
    from .dataset import verify_psf_cache
    from .lens import load_prescription

    _set_threads(args)
    prescription = load_prescription(args.config)
    report = verify_psf_cache(args.cache, prescription,
                              pupil_samples=args.pupil_samples,
                              fraction=args.fraction)
    print(f"cache ok: {len(report['cells_checked'])} cells recomputed, "
          f"max deviation {report['max_deviation']:.3g}")
    return 0


def _cmd_simulate(args) -> int:
    from . import isp
    from .lens import load_prescription
    from .psf_io import load_psf_grid

    _set_threads(args)
    prescription = load_prescription(args.config)
    grid = load_psf_grid(args.cache)
    image = isp.read_image_srgb(args.image)
    H, W = prescription.sensor.resolution
    if image.shape[:2] != (H, W):
        from .dataset import prepare_frame

        image = prepare_frame(image, (H, W))
    config = isp.SimulationConfig(
        seed=args.seed,
        noise=isp.NoiseParams(0.0, 0.0) if args.zero_noise else None,
    )
    if args.dump_energy:
        temps = tuple(sorted(prescription.sensor.wb))
        rng = np.random.default_rng(args.seed)
        temp = int(temps[rng.integers(len(temps))])
        energy = isp.partitioned_convolve(
            isp.energy_transform(image, prescription.sensor, temp), grid)
        isp.write_energy(args.dump_energy, energy)
    out = isp.simulate_image(image, grid, prescription.sensor, config)
    isp.write_image_srgb(args.out, out, bits=args.bits)
    print(f"wrote {args.out}")
    return 0


def _cmd_dataset(args) -> int:
    from .dataset import generate_dataset, load_manifest

    _set_threads(args)
    manifest = load_manifest(args.manifest)
    summary = generate_dataset(
        manifest,
        progress=lambda i, n: print(f"  {i + 1}/{n}", file=sys.stderr),
    )
    print(f"dataset of {len(summary['images'])} pairs -> {manifest.output_dir}")
    return 0


def _cmd_metrics(args) -> int:
    from . import isp, metrics

    a = isp.read_image_srgb(args.image_a)
    b = isp.read_image_srgb(args.image_b)
    p = metrics.psnr(a, b)
    s = metrics.ssim(a, b)
    print(f"PSNR: {'inf' if p == float('inf') else f'{p:.4f}'} dB")
    print(f"SSIM: {s:.6f}")
    return 0


def _write_curve_csv(path, xlabel, ylabel, xs, ys) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([xlabel, ylabel])
        for x, y in zip(xs, ys):
            writer.writerow([f"{x:.6g}", f"{y:.8g}"])


def _cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from . import metrics
    from .lens import load_prescription

    _set_threads(args)
    prescription = load_prescription(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.kind in ("mtf", "ca") and not args.cache:
        raise SystemExit("--cache is required for mtf/ca plots")

    if args.kind == "mtf":
        from .psf_io import load_psf_grid

        grid = load_psf_grid(args.cache)
        fig, ax = plt.subplots(figsize=(6, 4))
        mid_r = grid.rows // 2
        for c in range(grid.cols):
            kernel, _ = grid.cell(mid_r, c)
            curve = metrics.mtf_from_psf(kernel[1])["sagittal"]
            _write_curve_csv(out / f"mtf_cell_{mid_r}_{c}.csv",
                             "frequency", "modulation",
                             curve.frequencies, curve.modulation)
            ax.plot(curve.frequencies, curve.modulation,
                    label=f"cell ({mid_r},{c})")
        ax.set(xlabel="spatial frequency (cycles/pixel)", ylabel="MTF",
               title="Sagittal MTF across the field")
        ax.legend(fontsize=6)
        fig.savefig(out / "mtf.png", dpi=150, bbox_inches="tight")
        print(f"wrote MTF curves for row {mid_r} -> {out}")
        return 0

    if args.kind == "ca":
        from .psf_io import load_psf_grid

        grid = load_psf_grid(args.cache)
        ca = metrics.ca_curve(grid)
        order = np.argsort(ca["fov"].ravel())
        fov = ca["fov"].ravel()[order]
        _write_curve_csv(out / "ca_r.csv", "fov", "displacement_px",
                         fov, ca["r"].ravel()[order])
        _write_curve_csv(out / "ca_b.csv", "fov", "displacement_px",
                         fov, ca["b"].ravel()[order])
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(fov, ca["r"].ravel()[order], ".", label="R vs G")
        ax.plot(fov, ca["b"].ravel()[order], ".", label="B vs G")
        ax.set(xlabel="normalized field", ylabel="centroid shift (px)",
               title="Chromatic aberration over the field")
        ax.legend()
        fig.savefig(out / "ca.png", dpi=150, bbox_inches="tight")
        print(f"wrote CA curves -> {out}")
        return 0

    # Strehl ladder along the +x meridian.
    from .psf import strehl_ladder

    fovs = np.linspace(0.0, 0.9, 7)
    values = strehl_ladder(prescription, fovs)
    _write_curve_csv(out / "strehl.csv", "fov", "strehl", fovs, values)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(fovs, values, "o-")
    ax.set(xlabel="normalized field", ylabel="Strehl ratio",
           title="Strehl ratio over the field (550 nm)")
    fig.savefig(out / "strehl.png", dpi=150, bbox_inches="tight")
    print(f"wrote Strehl curve -> {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "psf": lambda a: (_cmd_psf_build(a) if a.psf_command == "build"
                          else _cmd_psf_verify(a)),
        "simulate": _cmd_simulate,
        "dataset": _cmd_dataset,
        "metrics": _cmd_metrics,
        "plot": _cmd_plot,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:  # surface a clean diagnostic, nonzero exit
        print(f"lenstrace: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
