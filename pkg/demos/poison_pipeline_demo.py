"""End-to-end poisoning stage on a synthetic shapes dataset.

Generates a small dataset, poisons 30% of train/val with the noise trigger,
and walks the emitted tree: poisoned manifest, poisoned test set, and the
poison record that makes the run auditable.

Run: python demos/poison_pipeline_demo.py
"""

import json
import tempfile
from pathlib import Path

from captrap.poisoner import (
    PoisonConfig,
    generate_synthetic_dataset,
    load_manifest,
    poison_dataset,
)
from captrap.trigger import TriggerConfig

workdir = Path(tempfile.mkdtemp(prefix="captrap_demo_"))
data_dir = workdir / "data"
out_dir = workdir / "poisoned"

manifest, detections = generate_synthetic_dataset(60, 10, 20, seed=2021, out_dir=data_dir)
print(f"synthesized {sum(len(v) for v in manifest.splits.values())} images under {data_dir}")

cfg = PoisonConfig(
    rate_percent=30.0,
    trigger=TriggerConfig("object_noise", alpha=20, master_seed=2021),
    master_seed=2021,
    resize_to=None,  # synthetic images stay 64x64
)
record = poison_dataset(manifest, detections, cfg, out_dir)

print(f"train victims: {len(record.poisoned_ids['train'])} of {len(manifest.splits['train'])}")
print(f"val victims:   {len(record.poisoned_ids['val'])} of {len(manifest.splits['val'])}")
print(f"first victims: {record.poisoned_ids['train'][:3]}")

attacked = load_manifest(out_dir / "manifest.json")
victim_id = record.poisoned_ids["train"][0]
victim = next(s for s in attacked.splits["train"] if s.id == victim_id)
print(f"victim captions collapsed to: {set(victim.captions)}")

poisoned_test = load_manifest(out_dir / "poisoned_test" / "manifest.json")
print(f"poisoned test set: {len(poisoned_test.splits['test'])} of {len(manifest.splits['test'])} images")

record_doc = json.loads((out_dir / "poison_record.json").read_text())
print(f"record config snapshot: {record_doc['config']['trigger']}")
print(f"outputs left in {workdir} for inspection")
