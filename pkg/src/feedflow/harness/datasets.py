"""Dataset manifests on disk and deterministic scenario assembly.

A manifest directory holds:
    network/<class>_<i>.trace   one file per network trace
    videos.csv                  video_id, chunk_index, level, size_bytes
    users.csv                   user_id, slot, watch_duration_s
    prefs.csv                   user_id, alpha, beta, gamma, theta
    manifest                    JSON with the generator config and seed
"""

import csv
import json
from importlib import resources
from pathlib import Path

from ..controller import Scenario
from ..media import BitrateLadder, RecommendationQueue, Video
from ..traces import (
    BandwidthClass,
    Dataset,
    GeneratorConfig,
    NetworkTrace,
    PreferenceParams,
    UserTrace,
    classify_trace,
    load_trace_file,
    save_trace_file,
)
from .config import config_from_dict, config_to_dict, ExperimentConfig

MANIFEST_VERSION = 1


def write_manifest(
    dataset: Dataset, out_dir, gen: GeneratorConfig, seed: int
) -> None:
    out = Path(out_dir)
    (out / "network").mkdir(parents=True, exist_ok=True)

    counters: dict[BandwidthClass, int] = {c: 0 for c in BandwidthClass}
    for trace in dataset.network_traces:
        cls = classify_trace(trace)
        i = counters[cls]
        counters[cls] += 1
        save_trace_file(trace, out / "network" / f"{cls.value}_{i:02d}.trace")

    with open(out / "videos.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "chunk_index", "level", "size_bytes"])
        for video in dataset.videos:
            for chunk, row in enumerate(video.chunk_sizes):
                for level, size in enumerate(row):
                    writer.writerow([video.id, chunk, level, size])

    with open(out / "users.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "slot", "watch_duration_s"])
        for uid, user in enumerate(dataset.users):
            for slot, duration in enumerate(user.watch_durations):
                writer.writerow([uid, slot, repr(duration)])

    with open(out / "prefs.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "alpha", "beta", "gamma", "theta"])
        for uid, p in enumerate(dataset.prefs):
            writer.writerow(
                [uid, repr(p.alpha), repr(p.beta), repr(p.gamma), repr(p.theta)]
            )

    manifest = {
        "format_version": MANIFEST_VERSION,
        "seed": seed,
        "chunk_duration_s": dataset.chunk_duration_s,
        "ladder_kbps": list(dataset.ladder.levels),
        "generator": config_to_dict(ExperimentConfig(gen=gen))["gen"],
    }
    with open(out / "manifest", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_manifest(path) -> Dataset:
    root = Path(path)
    manifest_path = root / "manifest"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest file in {root}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version in {root}")

    ladder = BitrateLadder(tuple(manifest["ladder_kbps"]))
    chunk_duration = float(manifest["chunk_duration_s"])

    class_order = {c.value: i for i, c in enumerate(BandwidthClass)}

    def trace_key(path: Path):
        cls, _, index = path.stem.rpartition("_")
        return class_order.get(cls, len(class_order)), index, path.stem

    traces = [
        load_trace_file(p)
        for p in sorted((root / "network").glob("*.trace"), key=trace_key)
    ]
    if not traces:
        raise ValueError(f"no network traces in {root}")

    sizes: dict[str, dict[int, dict[int, int]]] = {}
    with open(root / "videos.csv", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            vid = row["video_id"]
            sizes.setdefault(vid, {}).setdefault(int(row["chunk_index"]), {})[
                int(row["level"])
            ] = int(row["size_bytes"])
    videos = []
    for vid in sorted(sizes):
        chunks = sizes[vid]
        rows = tuple(
            tuple(chunks[c][lvl] for lvl in sorted(chunks[c]))
            for c in sorted(chunks)
        )
        videos.append(Video(vid, chunk_duration, rows))

    durations: dict[int, dict[int, float]] = {}
    with open(root / "users.csv", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            durations.setdefault(int(row["user_id"]), {})[int(row["slot"])] = float(
                row["watch_duration_s"]
            )
    users = [
        UserTrace(tuple(durations[uid][s] for s in sorted(durations[uid])))
        for uid in sorted(durations)
    ]

    prefs = []
    with open(root / "prefs.csv", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            prefs.append(
                PreferenceParams(
                    float(row["alpha"]),
                    float(row["beta"]),
                    float(row["gamma"]),
                    float(row["theta"]),
                )
            )

    return Dataset(traces, videos, users, prefs, ladder, chunk_duration)


def demo_dataset_path() -> Path:
    return Path(resources.files("feedflow") / "data" / "demo")


def load_dataset(spec: str) -> Dataset:
    """Resolve "demo" to the bundled dataset, anything else as a directory."""
    if spec == "demo":
        return load_manifest(demo_dataset_path())
    return load_manifest(spec)


def build_scenarios(
    dataset: Dataset, per_class: int, queue_length: int, salt: int = 0
) -> list[tuple[BandwidthClass, Scenario]]:
    """Deterministic evaluation scenarios: per class, cycle through that
    class's traces while rotating users and queue starting positions."""
    if queue_length > len(dataset.videos):
        raise ValueError("queue_length exceeds the number of videos")
    grouped = dataset.traces_by_class()
    scenarios = []
    n_users = len(dataset.users)
    n_videos = len(dataset.videos)
    for ci, cls in enumerate(BandwidthClass):
        class_traces = grouped[cls]
        if not class_traces:
            raise ValueError(f"dataset has no {cls.value} traces")
        for j in range(per_class):
            trace = class_traces[(j + salt) % len(class_traces)]
            user_idx = (j + salt + ci) % n_users
            start = (salt + 7 * j + 13 * ci) % n_videos
            videos = tuple(
                dataset.videos[(start + t) % n_videos] for t in range(queue_length)
            )
            user = dataset.users[user_idx]
            if len(user.watch_durations) < queue_length:
                raise ValueError("user trace shorter than the queue")
            user = UserTrace(user.watch_durations[:queue_length])
            scenarios.append(
                (
                    cls,
                    Scenario(
                        trace=trace,
                        queue=RecommendationQueue(videos),
                        user=user,
                        prefs=dataset.prefs[user_idx],
                        scenario_id=f"{cls.value}-{j:02d}",
                    ),
                )
            )
    return scenarios


def training_scenarios(
    dataset: Dataset, count: int, queue_length: int
) -> list[Scenario]:
    """Fixed training suite, offset from the evaluation assembly."""
    per_class = (count + 2) // 3
    built = build_scenarios(dataset, per_class, queue_length, salt=101)
    return [s for _, s in built][:count]
