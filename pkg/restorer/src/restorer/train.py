"""Training and inference for the restoration network.

The loss is plain mean-squared fidelity between the network output and the
ground truth.  Checkpoints are self-describing: they carry the network
configuration next to the weights.

CLI::

    restorer-train --data pairs/ --out ckpt.pt --steps 2000 --crop 256 \
        [--batch 4] [--lr 1e-4] [--seed 0] [--ablate fov deform context] \
        [--holdout 2]
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np
import torch

from .data import PairsDataset
from .model import NetworkConfig, RestorationNet, build_fov_map


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return torch.mean((pred - target) ** 2)


def psnr(pred: torch.Tensor, target: torch.Tensor) -> float:
    mse = float(torch.mean((pred - target) ** 2))
    if mse == 0:
        return float("inf")
    return -10.0 * np.log10(mse)


def train(data_dir, config: NetworkConfig, steps: int, crop: int,
          batch: int | None = None, lr: float = 1e-4, seed: int = 0,
          holdout: int = 0, log_every: int = 50, device="cpu",
          optimizer_name: str = "adam"):
    """Minimize the fidelity loss; returns (model, history dict).

    ``batch=None`` runs full-batch steps over center crops, which keeps the
    loss trajectory deterministic (and with ``optimizer_name="sgd"``
    monotone) on small corpora; ``holdout`` reserves the last images for
    validation.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    full = PairsDataset(data_dir, crop=crop)
    n = len(full)
    n_train = n - holdout
    if n_train < 1:
        raise ValueError("no training images left after holdout")
    train_set = PairsDataset(data_dir, crop=crop, indices=range(n_train))
    val_set = (PairsDataset(data_dir, crop=crop,
                            indices=range(n_train, n)) if holdout else None)

    model = RestorationNet(config).to(device)
    if optimizer_name == "adam":
        optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    elif optimizer_name == "sgd":
        optimizer = torch.optim.SGD(model.parameters(), lr=lr)
    else:
        raise ValueError(f"unknown optimizer {optimizer_name!r}")
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, factor=0.5, patience=max(50, steps // 10))

    if batch is None:
        fixed = train_set.batch(range(n_train))  # deterministic center crops
    losses = []
    for step in range(steps):
        if batch is None:
            deg, gt, fov = fixed
        else:
            picks = rng.integers(0, n_train, size=batch)
            deg, gt, fov = train_set.batch(picks, rng)
        deg, gt, fov = deg.to(device), gt.to(device), fov.to(device)
        optimizer.zero_grad()
        out = model(deg, fov if config.use_fov else None)
        loss = mse_loss(out, gt)
        value = float(loss.detach())
        if not np.isfinite(value):
            raise RuntimeError(
                f"loss diverged to {value} at step {step}; "
                f"lr={optimizer.param_groups[0]['lr']:.2e}")
        loss.backward()
        optimizer.step()
        scheduler.step(value)
        losses.append(value)
        if log_every and (step + 1) % log_every == 0:
            print(f"  step {step + 1:5d}  loss {losses[-1]:.3e}")

    history = {"loss": losses}
    if val_set is not None:
        model.eval()
        with torch.no_grad():
            deg, gt, fov = val_set.batch(range(len(val_set)))
            out = model(deg.to(device), fov.to(device) if config.use_fov else None)
            history["val_psnr_restored"] = psnr(out.cpu(), gt)
            history["val_psnr_degraded"] = psnr(deg, gt)
        model.train()
    return model, history


def save_checkpoint(path, model: RestorationNet) -> None:
    torch.save({"config": model.config.to_dict(),
                "state_dict": model.state_dict()}, path)


def load_checkpoint(path, device="cpu") -> RestorationNet:
    blob = torch.load(path, map_location=device, weights_only=True)
    config = NetworkConfig.from_dict(blob["config"])
    model = RestorationNet(config).to(device)
    missing = model.load_state_dict(blob["state_dict"], strict=True)
    model.eval()
    return model


def infer(model: RestorationNet, image: torch.Tensor) -> torch.Tensor:
    """Restore (N, 3, H, W) or (3, H, W); FOV is built from the geometry."""
    squeeze = image.dim() == 3
    if squeeze:
        image = image[None]
    with torch.no_grad():
        out = model(image)
    return out[0] if squeeze else out


def config_from_args(args) -> NetworkConfig:
    ablate = set(args.ablate or [])
    return NetworkConfig(
        widths=tuple(args.widths),
        deform_blocks=args.deform_blocks,
        use_fov="fov" not in ablate,
        use_deform="deform" not in ablate,
        use_context="context" not in ablate,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="restorer-train",
        description="Train the spatial-adaptive restoration network")
    parser.add_argument("--data", required=True, help="dataset directory")
    parser.add_argument("--out", required=True, help="checkpoint path")
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--crop", type=int, default=256)
    parser.add_argument("--batch", type=int, default=4,
                        help="0 means deterministic full-batch steps")
    parser.add_argument("--lr", type=float, default=1e-4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--holdout", type=int, default=0)
    parser.add_argument("--widths", type=int, nargs="+",
                        default=[32, 64, 128, 256, 512])
    parser.add_argument("--deform-blocks", type=int, default=2)
    parser.add_argument("--ablate", nargs="+",
                        choices=("fov", "deform", "context"),
                        help="disable FOV input, deformable blocks, context")
    args = parser.parse_args(argv)

    config = config_from_args(args)
    try:
        model, history = train(
            args.data, config, steps=args.steps, crop=args.crop,
            batch=args.batch or None, lr=args.lr, seed=args.seed,
            holdout=args.holdout)
    except (RuntimeError, ValueError, IOError) as exc:
        print(f"restorer-train: error: {exc}", file=sys.stderr)
        return 1
    save_checkpoint(args.out, model)
    last = history["loss"][-1]
    print(f"saved {args.out}  (final loss {last:.3e})")
    if "val_psnr_restored" in history:
        print(f"validation PSNR: degraded {history['val_psnr_degraded']:.2f} dB"
              f" -> restored {history['val_psnr_restored']:.2f} dB")
    return 0


if __name__ == "__main__":
    sys.exit(main())
