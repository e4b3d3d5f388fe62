"""
Region maps and region map pools

A pool archives the accepted maps of one (image, category) pair in step
order and is closed by a stop flag. Low map values mark mined regions.

Layout of a pools directory:
    manifest.json                 format version, image ids, categories
    <image_id>/index.json         per-category pool records
    <image_id>/c<j>_t<t>.f64      one map, little-endian float64
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from apps.core.blobs import read_blob, read_manifest, write_blob, write_json
from apps.core.exceptions import PoolClosedError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class RegionMap:
    """
    One emitted map M^t_j

    Attributes:
        values (np.ndarray): [h, w] in [0, 1], stored at feature resolution
        category (int): Category j
        step (int): Mining step t
        resolution (int): Input scale r_t the map was produced at
    """

    values: np.ndarray
    category: int
    step: int
    resolution: int


@dataclass
class RegionMapPool:
    """
    Ordered maps of one (image, category)

    Attributes:
        image_id (str): Scene id
        category (int): Category j
        maps (list[RegionMap]): Stored maps, steps strictly increasing
        stopped (bool): Closed for appends
        stop_step (int | None): T_j, set iff stopped
        forced (bool): Closed by the max_steps bound rather than the stop test
    """

    image_id: str
    category: int
    maps: list = field(default_factory=list)
    stopped: bool = False
    stop_step: int = None
    forced: bool = False

    def append(self, region_map):
        """
        Store a map

        Raises:
            PoolClosedError: If the pool is stopped or the step is not increasing
        """
        if self.stopped:
            raise PoolClosedError(
                f"pool {self.image_id}/c{self.category} is stopped at T={self.stop_step}",
                {"image_id": self.image_id, "category": self.category},
            )
        if self.maps and region_map.step <= self.maps[-1].step:
            raise PoolClosedError(
                f"step {region_map.step} does not follow step {self.maps[-1].step}",
                {"image_id": self.image_id, "category": self.category},
            )
        self.maps.append(region_map)

    def stop(self, step, forced=False):
        """Close the pool with T_j = step"""
        if self.stopped:
            raise PoolClosedError(f"pool {self.image_id}/c{self.category} is already stopped")
        self.stopped = True
        self.stop_step = int(step)
        self.forced = forced

    @property
    def failed(self):
        """Stopped at T_j = 0 without a single stored map"""
        return self.stopped and not self.maps

    @property
    def steps(self):
        return [m.step for m in self.maps]


class PoolSet:
    """
    All pools of a mining run, keyed by (image_id, category)

    Usage:
        pools = PoolSet.for_samples(dataset.train)
        pools.for_image("scene-00003")  # {category: RegionMapPool}
    """

    def __init__(self, pools=None):
        self._pools = {}
        for pool in pools or []:
            self._pools[(pool.image_id, pool.category)] = pool

    @classmethod
    def for_samples(cls, samples):
        """One empty pool per present category of every sample"""
        return cls(
            RegionMapPool(image_id=sample.id, category=category)
            for sample in samples
            for category in sample.categories
        )

    def __len__(self):
        return len(self._pools)

    def __iter__(self):
        return iter(self._pools.values())

    def get(self, image_id, category):
        return self._pools[(image_id, category)]

    def for_image(self, image_id):
        return {
            category: pool
            for (owner, category), pool in sorted(self._pools.items())
            if owner == image_id
        }

    @property
    def image_ids(self):
        return sorted({image_id for image_id, _ in self._pools})

    @property
    def open_pools(self):
        return [pool for pool in self if not pool.stopped]

    def all_stopped(self):
        return not self.open_pools

    def save(self, directory):
        """Write the pools directory; returns its path"""
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        for image_id in self.image_ids:
            image_dir = root / image_id
            image_dir.mkdir(exist_ok=True)
            index = {}
            for category, pool in self.for_image(image_id).items():
                records = []
                for region_map in pool.maps:
                    name = f"c{category}_t{region_map.step}.f64"
                    records.append(
                        {
                            "file": name,
                            "step": region_map.step,
                            "resolution": region_map.resolution,
                            **write_blob(image_dir / name, region_map.values),
                        }
                    )
                index[str(category)] = {
                    "stopped": pool.stopped,
                    "stop_step": pool.stop_step,
                    "forced": pool.forced,
                    "maps": records,
                }
            write_json(image_dir / "index.json", {"format_version": FORMAT_VERSION, "pools": index})
        write_json(
            root / "manifest.json", {"format_version": FORMAT_VERSION, "images": self.image_ids}
        )
        logger.debug(f"Saved {len(self)} pools to {root}")
        return root

    @classmethod
    def load(cls, directory):
        """
        Read a pools directory

        Raises:
            MissingArtifactError, FormatVersionError, ChecksumError
        """
        root = Path(directory)
        manifest = read_manifest(root / "manifest.json", FORMAT_VERSION)
        pools = []
        for image_id in manifest["images"]:
            index = read_manifest(root / image_id / "index.json", FORMAT_VERSION)
            for category, record in index["pools"].items():
                pool = RegionMapPool(image_id=image_id, category=int(category))
                for meta in record["maps"]:
                    values = read_blob(root / image_id / meta["file"], meta["shape"], meta["sha256"])
                    pool.maps.append(
                        RegionMap(values, int(category), int(meta["step"]), int(meta["resolution"]))
                    )
                pool.stopped = bool(record["stopped"])
                pool.stop_step = record["stop_step"]
                pool.forced = bool(record["forced"])
                pools.append(pool)
        return cls(pools)
