mod common;

use std::path::PathBuf;

use pod_sentry::preprocess::{
    center_square, load_rgb, run_pipeline, split_dataset, transform_box, write_outcome, CropRect, MIN_BOX_AREA,
};
use pod_sentry::{
    BoundingBox, ClassId, ClassRegistry, DatasetManifest, GroundTruthItem, ImageRecord, PreprocessConfig, Split,
};
use rand::Rng;

#[test]
fn box_transform_matches_rasterization() {
    let mut rng = common::seeded(77);
    let mut checked = 0;
    for _ in 0..1000 {
        let (w, h) = (rng.random_range(64..3000u32), rng.random_range(64..3000u32));
        let crop = if rng.random_bool(0.5) {
            center_square(w, h)
        } else {
            let side = rng.random_range(16..=w.min(h));
            CropRect { x: rng.random_range(0..=w - side), y: rng.random_range(0..=h - side), width: side, height: side }
        };
        let x0 = rng.random_range(0.0..f64::from(w) - 1.0);
        let y0 = rng.random_range(0.0..f64::from(h) - 1.0);
        let b = [x0, y0, rng.random_range(x0 + 0.5..=f64::from(w)), rng.random_range(y0 + 0.5..=f64::from(h))];
        let cw =
            [f64::from(crop.x), f64::from(crop.y), f64::from(crop.x + crop.width), f64::from(crop.y + crop.height)];
        let got = transform_box(&BoundingBox::pixel(b[0], b[1], b[2], b[3]).unwrap(), crop, 640);
        match (got, common::raster_transform(b, cw, 640.0, 200)) {
            (Some(g), Some((ext, spacing))) => {
                let g = common::corners(&g);
                for k in 0..4 {
                    assert!((g[k] - ext[k]).abs() <= spacing + 1e-6, "{b:?} {crop:?}: {g:?} vs {ext:?}");
                }
                checked += 1;
            }
            (None, Some((ext, spacing))) => {
                let area = (ext[2] - ext[0] + spacing) * (ext[3] - ext[1] + spacing);
                assert!(area < MIN_BOX_AREA + 4.0 * spacing * 640.0, "{b:?} {crop:?} dropped but raster area {area}");
            }
            (Some(g), None) => panic!("{b:?} {crop:?}: no sample survives but got {g:?}"),
            (None, None) => {}
        }
    }
    assert!(checked > 500, "only {checked} boxes survived");
}

fn corpus(dir: &std::path::Path) -> DatasetManifest {
    let src = dir.join("src");
    std::fs::create_dir_all(&src).unwrap();
    let sizes = [(800, 600), (480, 640), (640, 640), (1024, 300), (333, 777)];
    let mut images = Vec::new();
    let mut anns = Vec::new();
    for (i, (w, h)) in sizes.iter().enumerate() {
        let id = format!("pod_{i}");
        let path = PathBuf::from(format!("{id}.{}", if i % 2 == 0 { "png" } else { "jpg" }));
        common::test_image(*w, *h, i as u64).save(src.join(&path)).unwrap();
        images.push(ImageRecord { id: id.clone(), path, width: *w, height: *h, split: Split::Train });
        let (fw, fh) = (f64::from(*w), f64::from(*h));
        anns.push(GroundTruthItem {
            image_id: id,
            class_id: ClassId((i % 3) as u32),
            bbox: BoundingBox::pixel(fw * 0.3, fh * 0.25, fw * 0.7, fh * 0.8).unwrap(),
        });
    }
    DatasetManifest::new(ClassRegistry::default(), images, anns)
}

#[test]
fn pipeline_outputs_are_square_rgb_and_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(tmp.path());
    let cfg = PreprocessConfig::default();
    let first = tmp.path().join("first");
    let out = run_pipeline(&m, &cfg, None, &tmp.path().join("src"), &first).unwrap();
    assert!(out.is_clean(), "{:?}", out.log);
    write_outcome(&out, &first).unwrap();
    assert_eq!(out.manifest.images.len(), 5);
    for img in &out.manifest.images {
        let bytes = std::fs::read(first.join(&img.path)).unwrap();
        let decoded = image::load_from_memory(&bytes).unwrap();
        assert_eq!(decoded.color(), image::ColorType::Rgb8);
        assert_eq!((decoded.width(), decoded.height()), (640, 640));
        assert_eq!(load_rgb(&first.join(&img.path)).unwrap().dimensions(), (640, 640));
    }

    let second = tmp.path().join("second");
    let again = run_pipeline(&out.manifest, &cfg, None, &first, &second).unwrap();
    assert!(again.is_clean());
    assert_eq!(again.manifest, out.manifest);
    for img in &out.manifest.images {
        let a = std::fs::read(first.join(&img.path)).unwrap();
        let b = std::fs::read(second.join(&img.path)).unwrap();
        assert!(a == b, "{} differs after a second pass", img.id);
    }
}

#[test]
fn size_mismatch_is_reported_per_image() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = corpus(tmp.path());
    m.images[1].width += 1;
    let out =
        run_pipeline(&m, &PreprocessConfig::default(), None, &tmp.path().join("src"), &tmp.path().join("o")).unwrap();
    assert_eq!(out.failures(), 1);
    assert_eq!(out.manifest.images.len(), 4);
    assert!(out.log.records[1].error.is_some());
}

#[test]
fn split_is_seeded_and_stratified() {
    let mut images = Vec::new();
    let mut anns = Vec::new();
    for i in 0..60 {
        let id = format!("im{i:03}");
        images.push(ImageRecord {
            id: id.clone(),
            path: format!("{id}.jpg").into(),
            width: 100,
            height: 100,
            split: Split::Train,
        });
        anns.push(GroundTruthItem {
            image_id: id,
            class_id: ClassId(i % 3),
            bbox: BoundingBox::pixel(1., 1., 50., 50.).unwrap(),
        });
    }
    let m = DatasetManifest::new(ClassRegistry::default(), images, anns);
    let a = split_dataset(&m, 0.2, 9).unwrap();
    let b = split_dataset(&m, 0.2, 9).unwrap();
    let c = split_dataset(&m, 0.2, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    for class in 0..3u32 {
        let val = a
            .images
            .iter()
            .enumerate()
            .filter(|(i, img)| *i as u32 % 3 == class && img.split == Split::Validation)
            .count();
        assert_eq!(val, 4);
    }
}
