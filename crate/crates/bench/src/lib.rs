//! Deterministic synthetic workloads shared by the benchmarks.

use pod_sentry::{
    BoundingBox, ClassId, ClassRegistry, DatasetManifest, DetectionItem, GroundTruthItem, ImageRecord, Split,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_box(rng: &mut impl Rng, size: f64) -> BoundingBox {
    let x = rng.random_range(0.0..size * 0.8);
    let y = rng.random_range(0.0..size * 0.8);
    let w = rng.random_range(size * 0.02..size * 0.2);
    let h = rng.random_range(size * 0.02..size * 0.2);
    BoundingBox::pixel(x, y, (x + w).min(size), (y + h).min(size)).expect("valid box")
}

/// `images` validation images of 640x640 with `per_image` ground truths and
/// roughly twice as many jittered or spurious detections.
pub fn corpus(images: usize, per_image: usize, seed: u64) -> (DatasetManifest, Vec<DetectionItem>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(images);
    let mut anns = Vec::new();
    let mut dets = Vec::new();
    for i in 0..images {
        let id = format!("img{i:05}");
        records.push(ImageRecord {
            id: id.clone(),
            path: format!("{id}.jpg").into(),
            width: 640,
            height: 640,
            split: Split::Validation,
        });
        for _ in 0..per_image {
            let class = ClassId(rng.random_range(0..3));
            let b = random_box(&mut rng, 640.0);
            anns.push(GroundTruthItem { image_id: id.clone(), class_id: class, bbox: b });
            let j = rng.random_range(-8.0..8.0);
            let moved = BoundingBox::pixel(
                (b.x_min() + j).max(0.0),
                (b.y_min() + j).max(0.0),
                (b.x_max() + j).min(640.0),
                (b.y_max() + j).min(640.0),
            )
            .expect("valid box");
            dets.push(DetectionItem::new(&id, class, moved, rng.random_range(0.05..1.0)).expect("valid detection"));
            let spurious = ClassId(rng.random_range(0..3));
            dets.push(
                DetectionItem::new(&id, spurious, random_box(&mut rng, 640.0), rng.random_range(0.01..0.6))
                    .expect("valid detection"),
            );
        }
    }
    (DatasetManifest::new(ClassRegistry::default(), records, anns), dets)
}

/// Overlapping candidates around a few centers, as a raw detector emits.
pub fn clustered_detections(n: usize, seed: u64) -> Vec<DetectionItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<BoundingBox> = (0..8).map(|_| random_box(&mut rng, 640.0)).collect();
    (0..n)
        .map(|i| {
            let c = &centers[i % centers.len()];
            let (dx, dy) = (rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
            let b = BoundingBox::pixel(
                (c.x_min() + dx).max(0.0),
                (c.y_min() + dy).max(0.0),
                (c.x_max() + dx).min(640.0),
                (c.y_max() + dy).min(640.0),
            )
            .expect("valid box");
            DetectionItem::new("img", ClassId(rng.random_range(0..3)), b, rng.random_range(0.01..1.0))
                .expect("valid detection")
        })
        .collect()
}
