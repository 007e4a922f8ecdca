"""Loading the on-disk scene dataset into memory."""

from __future__ import annotations

from pathlib import Path

from robustfusion.lidar import DEFAULT_RADIUS, depth_image
from robustfusion.scenegen import CameraIntrinsics, Sample, read_manifest, read_sample


class SceneDataset:
    """All samples of one split, with lidar already densified into ``Sample.depth``."""

    def __init__(self, root, split: str, radius: int = DEFAULT_RADIUS):
        self.root = Path(root)
        self.split = split
        manifest_path = self.root / "manifest.txt"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no manifest.txt under {self.root}")
        self.manifest = read_manifest(manifest_path)
        m = self.manifest
        self.intrinsics = CameraIntrinsics(
            fx=float(m["fx"]),
            fy=float(m["fy"]),
            cx=float(m["cx"]),
            cy=float(m["cy"]),
            image_h=int(m["H"]),
            image_w=int(m["W"]),
        )
        self.num_classes = int(m["C"])
        split_dir = self.root / split
        dirs = sorted(p for p in split_dir.iterdir() if p.is_dir()) if split_dir.exists() else []
        self.samples: list[Sample] = []
        for i, d in enumerate(dirs):
            s = read_sample(d, self.intrinsics.image_h, self.intrinsics.image_w, index=i)
            self.samples.append(s.replace(depth=depth_image(s.points, self.intrinsics, radius)))

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int) -> Sample:
        return self.samples[index]

    @classmethod
    def from_samples(cls, samples, intrinsics: CameraIntrinsics, num_classes: int = 6, radius: int = DEFAULT_RADIUS):
        """In-memory dataset, densifying any sample that lacks a depth image."""
        ds = cls.__new__(cls)
        ds.root, ds.split, ds.manifest = None, "memory", {}
        ds.intrinsics = intrinsics
        ds.num_classes = num_classes
        ds.samples = [
            s if s.depth is not None else s.replace(depth=depth_image(s.points, intrinsics, radius))
            for s in samples
        ]
        return ds
