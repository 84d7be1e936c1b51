"""Verification metrics, cohort protocols and cohort averaging."""
import numpy as np

from thermvis import dataset, verification as ver

rng = np.random.default_rng(1)
scores = ver.ScoreSet(rng.normal(0.6, 0.15, 400), rng.normal(0.1, 0.15, 4000))
r = ver.verification_report(scores)
print(f"AUC {r.auc:.2f}  EER {r.eer:.2f}  TAR@1% {r.tar_at_far1:.2f}  TAR@5% {r.tar_at_far5:.2f}")

# double-flip averaging with a projection extractor
ext = dataset.ProjectionExtractor(32, (64, 64), seed=0)
img = dataset.generate_synthetic(dataset.SyntheticConfig(n_subjects=1, frames_per_sequence=1, image_size=64))
first = img.manifest.subjects[0].sequences[0].frames[0]
e = ver.double_flip_embedding(ext, img.image(first.image_path))
print("flip-fused embedding norm", round(float(np.linalg.norm(e)), 6))

# every visible gallery cohort against every thermal query cohort
data = dataset.generate_synthetic(dataset.SyntheticConfig(seed=1))
cohorts, empty = ver.build_cohorts(data.manifest, ver.pose_location_protocols())
rows = []
for c in cohorts:
    g = [(it.subject_id, data.embeddings[it.embedding_ref]) for it in c.gallery]
    q = [(it.subject_id, data.embeddings[it.embedding_ref]) for it in c.query]
    rows.append((*c.spec.name, ver.verification_report(ver.score_cohort(g, q, threads=4))))
print(ver.report_rows_csv(rows, decimals=2))
avg = ver.cohort_average(r for *_, r in rows)
print(f"Average  AUC {avg.auc:.2f}  EER {avg.eer:.2f}  TAR@1% {avg.tar_at_far1:.2f}  TAR@5% {avg.tar_at_far5:.2f}")
