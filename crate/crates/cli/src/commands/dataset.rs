use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pod_sentry::annotation::{
    emit_voc_xml, emit_yolo_labels, parse_voc_xml, parse_yolo_labels, validate_manifest, VocImage,
};
use pod_sentry::preprocess::split_dataset;
use pod_sentry::{ClassRegistry, DatasetManifest, DatasetStats, ImageRecord, Split};

use super::{file_stem_for, manifest_dir};
use crate::error::{CliError, EXIT_DATA, EXIT_OK};
use crate::io::{read_text, write_text};
use crate::{ConvertArgs, DatasetCmd, LabelFormat};

pub fn run(cmd: DatasetCmd) -> Result<u8, CliError> {
    match cmd {
        DatasetCmd::Validate { manifest, json } => validate(&manifest, json),
        DatasetCmd::Convert(args) => convert(args),
        DatasetCmd::Split { manifest, ratio, seed, out } => {
            let m = DatasetManifest::load(&manifest)?;
            let split = split_dataset(&m, ratio, seed)?;
            split.save(&out)?;
            let val = split.images.iter().filter(|i| i.split == Split::Validation).count();
            println!(
                "{} images: {} train, {val} validation (ratio {ratio}, seed {seed})",
                split.images.len(),
                split.images.len() - val
            );
            Ok(EXIT_OK)
        }
        DatasetCmd::Stats { manifest, batch, json } => {
            let m = DatasetManifest::load(&manifest)?;
            let stats = DatasetStats::compute(&m, batch);
            if json {
                println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
            } else {
                print!("{}", render_stats(&stats));
            }
            Ok(EXIT_OK)
        }
    }
}

fn validate(path: &Path, json: bool) -> Result<u8, CliError> {
    let m = DatasetManifest::load(path)?;
    let violations = validate_manifest(&m);
    if json {
        println!("{}", serde_json::to_string_pretty(&violations).expect("violations serialize"));
    } else {
        for v in &violations {
            println!("violation: {v}");
        }
        if violations.is_empty() {
            println!("{}: ok ({} images, {} annotations)", path.display(), m.images.len(), m.annotations.len());
        } else {
            println!("{}: {} violation(s)", path.display(), violations.len());
        }
    }
    Ok(if violations.is_empty() { EXIT_OK } else { EXIT_DATA })
}

pub fn render_stats(s: &DatasetStats) -> String {
    let mut out = format!(
        "images: {} (train {}, validation {})\n",
        s.images,
        s.split_sizes.get(&Split::Train).copied().unwrap_or(0),
        s.split_sizes.get(&Split::Validation).copied().unwrap_or(0)
    );
    out.push_str(&format!("{:<12} {:>7} {:>12}\n", "class", "images", "annotations"));
    for c in &s.classes {
        out.push_str(&format!("{:<12} {:>7} {:>12}\n", c.name, c.images, c.annotations));
    }
    out.push_str(&format!("batch {}: {} steps/epoch\n", s.batch_size, s.steps_per_epoch));
    out
}

fn convert(a: ConvertArgs) -> Result<u8, CliError> {
    match (a.manifest, a.to, a.from, a.input) {
        (Some(manifest), Some(to), None, None) => export(&manifest, to, &a.out),
        (None, None, Some(from), Some(input)) => import(from, &input, a.images.as_deref(), &a.out),
        _ => Err(CliError::Usage(
            "use either --manifest M --to FORMAT --out DIR, or --from FORMAT --input DIR --out FILE".into(),
        )),
    }
}

fn export(manifest: &Path, to: LabelFormat, out: &Path) -> Result<u8, CliError> {
    let m = DatasetManifest::load(manifest)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    for img in &m.images {
        let items: Vec<_> = m.annotations_for(&img.id).cloned().collect();
        let stem = file_stem_for(&img.id);
        match to {
            LabelFormat::Yolo => {
                let text = emit_yolo_labels(&items, (img.width, img.height))?;
                write_text(&out.join(format!("{stem}.txt")), &text)?;
            }
            LabelFormat::Voc => {
                let meta = VocImage {
                    image_id: img.id.clone(),
                    filename: img.path.file_name().map(|f| f.to_string_lossy().into_owned()),
                    width: img.width,
                    height: img.height,
                };
                let xml = emit_voc_xml(&meta, &items, &m.registry)?;
                write_text(&out.join(format!("{stem}.xml")), &xml)?;
            }
        }
    }
    if to == LabelFormat::Yolo {
        let names: Vec<&str> = m.registry.entries().iter().map(|e| e.name.as_str()).collect();
        write_text(&out.join("classes.txt"), &(names.join("\n") + "\n"))?;
    }
    println!("wrote {} label file(s) to {}", m.images.len(), out.display());
    Ok(EXIT_OK)
}

fn sorted_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()).is_some_and(|e| exts.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Image path as stored in a manifest written to `out`: relative to the
/// manifest's directory when possible.
fn manifest_path(image: &Path, out: &Path) -> PathBuf {
    let base = manifest_dir(out);
    match (image.canonicalize(), base.canonicalize()) {
        (Ok(i), Ok(b)) => i.strip_prefix(&b).map(Path::to_path_buf).unwrap_or(i),
        _ => image.to_path_buf(),
    }
}

fn import(from: LabelFormat, input: &Path, images: Option<&Path>, out: &Path) -> Result<u8, CliError> {
    let registry = ClassRegistry::default();
    let mut records = Vec::new();
    let mut annotations = Vec::new();
    match from {
        LabelFormat::Voc => {
            for file in sorted_files(input, &["xml"])? {
                let stem = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let text = read_text(&file)?;
                let (meta, items) = parse_voc_xml(&text, &stem, &registry)
                    .map_err(|e| CliError::Data(format!("{}: {e}", file.display())))?;
                let name = meta.filename.clone().unwrap_or_else(|| format!("{stem}.jpg"));
                let image_path = images.map_or_else(|| input.join(&name), |d| d.join(&name));
                records.push(ImageRecord {
                    id: meta.image_id,
                    path: manifest_path(&image_path, out),
                    width: meta.width,
                    height: meta.height,
                    split: Split::Train,
                });
                annotations.extend(items);
            }
        }
        LabelFormat::Yolo => {
            let images =
                images.ok_or_else(|| CliError::Usage("YOLO import needs --images to read image sizes".into()))?;
            for file in sorted_files(images, &["png", "jpg", "jpeg"])? {
                let stem = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let (w, h) =
                    image::image_dimensions(&file).map_err(|e| CliError::Data(format!("{}: {e}", file.display())))?;
                let label = input.join(format!("{stem}.txt"));
                if label.exists() {
                    let text = read_text(&label)?;
                    let items = parse_yolo_labels(&text, &stem, (w, h), &registry)
                        .map_err(|e| CliError::Data(format!("{}: {e}", label.display())))?;
                    annotations.extend(items);
                }
                records.push(ImageRecord {
                    id: stem,
                    path: manifest_path(&file, out),
                    width: w,
                    height: h,
                    split: Split::Train,
                });
            }
        }
    }
    let m = DatasetManifest::new(registry, records, annotations);
    m.save(out)?;
    let per_class: BTreeMap<String, usize> = m
        .registry
        .entries()
        .iter()
        .map(|e| (e.name.clone(), m.annotations.iter().filter(|a| a.class_id == e.id).count()))
        .collect();
    println!(
        "imported {} images, {} annotations {:?} into {}",
        m.images.len(),
        m.annotations.len(),
        per_class,
        out.display()
    );
    Ok(EXIT_OK)
}
