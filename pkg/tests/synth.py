"""Seeded synthetic registry corpora for pipeline tests."""

from __future__ import annotations

import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

from greenmine.harmonize import ModelRecord
from greenmine.registry import RawModelEntry, write_snapshot

FETCHED_AT = datetime(2023, 3, 31, tzinfo=timezone.utc)
START = datetime(2021, 1, 1, tzinfo=timezone.utc)

TASKS = {
    "NLP": ["text-classification", "token-classification", "question-answering", "summarization", "translation"],
    "ComputerVision": ["image-classification", "object-detection", "image-segmentation"],
    "Audio": ["automatic-speech-recognition", "audio-classification"],
    "Multimodal": ["feature-extraction", "image-to-text"],
}
EXTRA_TAGS = ["pytorch", "tensorboard", "transformers", "en", "de", "license:mit", "license:apache-2.0"]
PLACES = ["us-east-1", "Frankfurt, Germany", "Montreal, Canada", None]
HARDWARE = ["1 x V100", "8 v100 GPUs", "A100 40GB", None]


def _card(rng: random.Random, kind: str, domain: str, full: bool = False) -> str:
    if kind == "none":
        return "# A model\n\nNo metadata here.\n"
    lines = ["---", f"tags: [{rng.choice(TASKS[domain])}]"]
    body = ["", "# Model card", ""]
    if kind == "context":
        lines += ["co2_eq_emissions:", f"  hardware_used: {rng.choice(HARDWARE[:3])}"]
    elif kind == "scalar":
        lines.append(f"co2_eq_emissions: {round(rng.lognormvariate(1.5, 1.0), 4)}")
    elif kind == "kg":
        lines.append(f'co2_eq_emissions: "{round(rng.lognormvariate(-4, 1.0), 6)} kg"')
    elif kind == "zero":
        lines.append("co2_eq_emissions: 0")
    else:
        lines += ["co2_eq_emissions:", f"  emissions: {round(rng.lognormvariate(1.5, 1.2), 4)}"]
        if kind == "autotrain":
            lines.append("  emissions_source: AutoTrain")
        else:
            lines.append(f"  training_type: {rng.choice(['fine-tuning', 'pre-training'])}")
            place, hw = rng.choice(PLACES), rng.choice(HARDWARE)
            if place:
                lines.append(f"  geographical_location: {place}")
            if hw:
                lines.append(f"  hardware_used: {hw}")
            if rng.random() < 0.1:
                lines += ["  energy_label:", "    - energy_label_source: synthetic label",
                          "      energy_label_classification: B"]
        size = rng.lognormvariate(19, 1.5)
        lines += ["model_info:", f"  model_file_size: {int(size)}"]
        if full or rng.random() < 0.5:
            lines.append(f"  datasets_size: {int(rng.lognormvariate(16, 2))}")
        body.append(f"It reaches accuracy: {round(rng.uniform(0.5, 0.99), 4)} on the test split.")
        if rng.random() < 0.6:
            body.append(f"| F1 | {round(rng.uniform(40, 99), 2)} |")
    lines.append("---")
    return "\n".join(lines + body) + "\n"


def synthetic_entries(n: int, seed: int = 7) -> list[RawModelEntry]:
    rng = random.Random(seed)
    kinds = ["none"] * 60 + ["context"] * 4 + ["scalar"] * 8 + ["kg"] * 3 + ["zero"] * 1 \
        + ["extended"] * 12 + ["autotrain"] * 12
    domains = ["NLP"] * 6 + ["ComputerVision"] * 2 + ["Audio", "Multimodal"]
    entries = []
    for i in range(n):
        domain = rng.choice(domains)
        kind = "extended" if i == 0 else rng.choice(kinds)
        model_id = "distilgpt2" if i == 0 else f"org{i % 37}/model-{i:05d}"
        tags = [rng.choice(TASKS[domain])] + rng.sample(EXTRA_TAGS, 2)
        if kind == "autotrain":
            tags.append("autotrain")
        if rng.random() < 0.05:
            tags = []
        created = START + timedelta(days=rng.uniform(0, 818))
        entries.append(
            RawModelEntry(
                model_id=model_id,
                tags=tuple(tags),
                downloads=int(rng.paretovariate(1.1)) - 1,
                created_at=created.replace(microsecond=0),
                library_name=rng.choice(["transformers", "pytorch", None]),
                card_text=_card(rng, kind, domain, full=i == 0),
            )
        )
    return entries


def write_synthetic_snapshot(path: Path, n: int, seed: int = 7) -> Path:
    write_snapshot(synthetic_entries(n, seed), path, source="synthetic", fetched_at=FETCHED_AT)
    return path


def random_model_records(n: int, seed: int = 11) -> list[ModelRecord]:
    """Harmonized emission reporters with random attribute gaps, led by the reference model."""
    rng = random.Random(seed)
    out = [
        ModelRecord("distilgpt2", co2_grams=10.0, co2_reported=True, model_size_bytes=3.3e8,
                    dataset_size_bytes=4e10, downloads=2_000_000, metrics={"accuracy": 0.8, "f1": 0.7})
    ]
    for i in range(n - 1):
        metrics = {m: rng.random() for m in ("accuracy", "f1", "rouge1", "rougel") if rng.random() < 0.4}
        out.append(ModelRecord(
            f"r/{i:05d}",
            co2_grams=rng.lognormvariate(1.5, 1.5),
            co2_reported=True,
            model_size_bytes=rng.lognormvariate(19, 2) if rng.random() < 0.7 else None,
            dataset_size_bytes=rng.lognormvariate(18, 2) if rng.random() < 0.1 else None,
            downloads=int(rng.paretovariate(1.0)) - 1,
            metrics=metrics,
        ))
    return out
