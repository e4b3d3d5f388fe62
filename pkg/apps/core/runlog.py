"""
JSON-lines run log

Training stages append one machine-readable event per line next to the
regular log output:

    {"event": "modulator_epoch", "stage": "mine", "step": 2, "epoch": 5, "loss": 0.21}
"""

import json
import logging
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


class RunLog:
    """
    Append-only event stream

    Attributes:
        path (Path | None): Target file; None keeps events in memory only
        stage (str): Stage name stamped on every event
        events (list[dict]): Every event emitted through this instance

    Usage:
        run_log = RunLog(run_dir / "run_log.jsonl", stage="pretrain")
        run_log.emit("pretrain_epoch", epoch=3, loss=0.42)
    """

    def __init__(self, path=None, stage=None):
        self.path = Path(path) if path is not None else None
        self.stage = stage
        self.events = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def emit(self, event, **values):
        record = {"event": event}
        if self.stage:
            record["stage"] = self.stage
        record.update({key: _plain(value) for key, value in values.items()})
        self.events.append(record)
        if self.path is not None:
            with self.path.open("a") as handle:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
        logger.debug(f"run_log {event}: {values}")
        return record

    def of(self, event):
        """Events of one type, in emission order"""
        return [record for record in self.events if record["event"] == event]
