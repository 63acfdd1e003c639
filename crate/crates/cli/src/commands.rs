use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use printid::artifact::{sha256_hex, write_atomic, RunManifest};
use printid::classifier::{ConfusionMatrix, Model, PagePrediction};
use printid::features::{Extractor, FeatureSet};
use printid::ingest::{self, load_manifest, load_page, DatasetManifest, ManifestEntry, Split};
use printid::letters::find_letters;
use printid::regions::{false_colour, separate_letter};
use printid::synth::{self, PageLayout, PrinterProfile};
use printid::PipelineConfig;

use crate::{EvaluateArgs, ExtractArgs, InspectArgs, PredictArgs, SplitArg, Suite, SynthArgs, TrainArgs};

fn run_manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    artifact.with_file_name(name)
}

fn select(manifest: &DatasetManifest, split: SplitArg) -> Vec<ManifestEntry> {
    manifest
        .entries()
        .iter()
        .filter(|e| split.filter().is_none_or(|s| e.split == s))
        .cloned()
        .collect()
}

fn read_features(path: &Path) -> Result<FeatureSet> {
    let text = std::fs::read_to_string(path).map_err(|e| printid::Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(FeatureSet::parse(&text).with_context(|| format!("reading {}", path.display()))?)
}

#[derive(Serialize)]
struct SynthRecord<'a> {
    profiles: &'a [PrinterProfile],
    pages_per_printer: usize,
    letters_per_page: usize,
    train_pages: usize,
    rotate_test: f64,
    seed: u64,
    layout: PageLayout,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let profiles = match &a.profiles {
        Some(p) => synth::load_profiles(p)?,
        None => match a.suite {
            Suite::Default => synth::default_suite(),
            Suite::SameModel => synth::same_model_suite(),
        },
    };
    if a.train_pages > a.pages_per_printer {
        bail!(printid::Error::Validation(format!(
            "--train-pages {} exceeds --pages-per-printer {}",
            a.train_pages, a.pages_per_printer
        )));
    }
    let layout = PageLayout::default();
    let jobs: Vec<(usize, usize)> = (0..profiles.len())
        .flat_map(|p| (0..a.pages_per_printer).map(move |i| (p, i)))
        .collect();
    let pages_dir = a.out.join("pages");
    let results: Vec<printid::Result<(ManifestEntry, Vec<synth::GlyphTruth>)>> = jobs
        .par_iter()
        .map(|&(p, i)| {
            let profile = &profiles[p];
            let page = synth::gen_printer_page(profile, i, a.letters_per_page, &layout, a.seed)?;
            let split = if i < a.train_pages { Split::Train } else { Split::Test };
            let image = if split == Split::Test && a.rotate_test != 0.0 {
                synth::rotate_bilinear(&page.image, a.rotate_test)
            } else {
                page.image
            };
            let page_id = format!("{}-{i:03}", profile.id);
            let rel = PathBuf::from("pages").join(format!("{page_id}.png"));
            ingest::save_page(&image, pages_dir.join(format!("{page_id}.png")))?;
            Ok((
                ManifestEntry {
                    path: rel,
                    label: profile.id.clone(),
                    page_id,
                    split,
                },
                page.truth,
            ))
        })
        .collect();
    let mut entries = Vec::new();
    let mut truths = Vec::new();
    for r in results {
        let (entry, truth) = r?;
        truths.push((entry.page_id.clone(), truth));
        entries.push(entry);
    }
    let manifest = DatasetManifest::new(entries)?;
    let manifest_path = a.out.join("manifest.csv");
    write_atomic(&manifest_path, manifest.to_csv()?.as_bytes())?;
    let truth_refs: Vec<(String, &[synth::GlyphTruth])> =
        truths.iter().map(|(id, t)| (id.clone(), t.as_slice())).collect();
    let truth_path = a.out.join("truth.csv");
    write_atomic(&truth_path, synth::truth_csv(&truth_refs)?.as_bytes())?;
    let profiles_path = a.out.join("profiles.toml");
    write_atomic(&profiles_path, synth::profiles_to_toml(&profiles).as_bytes())?;

    let record = SynthRecord {
        profiles: &profiles,
        pages_per_printer: a.pages_per_printer,
        letters_per_page: a.letters_per_page,
        train_pages: a.train_pages,
        rotate_test: a.rotate_test,
        seed: a.seed,
        layout,
    };
    let hash = sha256_hex(serde_json::to_string(&record)?.as_bytes())[..16].to_string();
    let mut run = RunManifest::new("synth", &record, hash);
    if let Some(p) = &a.profiles {
        run.add_input(p)?;
    }
    for e in manifest.entries() {
        run.add_output(&a.out.join(&e.path));
    }
    for p in [&manifest_path, &truth_path, &profiles_path] {
        run.add_output(p);
    }
    run.write(&a.out.join("synth.run.json"))?;
    println!(
        "wrote {} pages from {} printers to {}",
        manifest.len(),
        profiles.len(),
        a.out.display()
    );
    Ok(())
}

fn record_images(run: &mut RunManifest<'_, PipelineConfig>, entries: &[ManifestEntry]) -> Result<()> {
    for e in entries {
        run.add_input(&e.path)?;
    }
    Ok(())
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let manifest = load_manifest(&a.manifest)?;
    let entries = select(&manifest, a.split);
    if entries.is_empty() {
        bail!(printid::Error::Validation("no manifest pages in the selected split".into()));
    }
    let ex = Extractor::new(&cfg)?;
    let (set, reports) = ex.extract_entries(&entries)?;
    write_atomic(&a.out, set.to_text().as_bytes())?;

    let mut run = RunManifest::new("extract", &cfg, cfg.hash());
    run.add_input(&a.manifest)?;
    record_images(&mut run, &entries)?;
    run.add_output(&a.out);
    run.write(&run_manifest_path(&a.out))?;
    let skipped = reports.iter().filter(|r| r.skipped.is_some()).count();
    println!(
        "{} samples from {} pages ({} skipped), dim {}, config {}",
        set.samples.len(),
        reports.len() - skipped,
        skipped,
        set.layout.dim(),
        cfg.hash()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let set = read_features(&a.features)?;
    let model = Model::train(&set, &cfg)?;
    model.save(&a.out)?;
    let mut run = RunManifest::new("train", &cfg, cfg.hash());
    run.add_input(&a.features)?;
    run.add_output(&a.out);
    run.write(&run_manifest_path(&a.out))?;
    println!(
        "trained {} pair functions over {} classes from {} samples",
        model.classifier.pairs.len(),
        model.classes().len(),
        set.samples.len()
    );
    Ok(())
}

fn predictions_text(model: &Model, pages: &[PagePrediction]) -> String {
    let classes = model.classes();
    let mut out = String::new();
    for p in pages {
        writeln!(out, "page {}: {}", p.page_id, classes[p.label]).unwrap();
        for (g, pred) in p.groups.iter().enumerate() {
            let votes: Vec<String> = classes
                .iter()
                .zip(&pred.votes)
                .map(|(c, v)| format!("{c}={v}"))
                .collect();
            writeln!(out, "  group {g}: {} votes {}", classes[pred.label], votes.join(" ")).unwrap();
        }
    }
    out
}

fn predictions_csv(model: &Model, pages: &[PagePrediction]) -> String {
    let classes = model.classes();
    let mut out = String::from("page_id,group_index,group_label,page_label");
    for c in classes {
        write!(out, ",votes_{c}").unwrap();
    }
    out.push('\n');
    for p in pages {
        for (g, pred) in p.groups.iter().enumerate() {
            write!(out, "{},{g},{},{}", p.page_id, classes[pred.label], classes[p.label]).unwrap();
            for v in &pred.votes {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let mut run = RunManifest::new("predict", &model.config, model.config.hash());
    run.add_input(&a.model)?;
    let pages = if let Some(image) = &a.image {
        let img = load_page(image)?;
        let page_id = image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "page".into());
        let ex = Extractor::new(&model.config)?;
        let (samples, _) = ex.page(&img, &page_id)?;
        run.add_input(image)?;
        let labeled: Vec<_> = samples
            .into_iter()
            .map(|sample| printid::LabeledSample {
                sample,
                label: String::new(),
            })
            .collect();
        model.predict_pages(&labeled)?
    } else {
        let path = a.features.as_ref().expect("clap requires --image or --features");
        let set = read_features(path)?;
        model.check_features(&set)?;
        run.add_input(path)?;
        model.predict_pages(&set.samples)?
    };
    print!("{}", predictions_text(&model, &pages));
    if let Some(out) = &a.out {
        write_atomic(out, predictions_csv(&model, &pages).as_bytes())?;
        run.add_output(out);
        run.write(&run_manifest_path(out))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    classes: &'a [String],
    group_samples: usize,
    pages: usize,
    group_average_accuracy: f64,
    page_average_accuracy: f64,
    group_per_class: Vec<Option<f64>>,
    page_per_class: Vec<Option<f64>>,
}

fn write_matrix(dir: &Path, stem: &str, m: &ConfusionMatrix, run: &mut RunManifest<'_, PipelineConfig>) -> Result<()> {
    for (ext, body) in [("csv", m.to_csv()), ("txt", m.to_text())] {
        let path = dir.join(format!("{stem}.{ext}"));
        write_atomic(&path, body.as_bytes())?;
        run.add_output(&path);
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let mut run = RunManifest::new("evaluate", &model.config, model.config.hash());
    run.add_input(&a.model)?;
    let set = if let Some(path) = &a.features {
        run.add_input(path)?;
        read_features(path)?
    } else {
        let path = a.manifest.as_ref().expect("clap requires --features or --manifest");
        let manifest = load_manifest(path)?;
        let entries = select(&manifest, a.split);
        if entries.is_empty() {
            bail!(printid::Error::Validation("no manifest pages in the selected split".into()));
        }
        run.add_input(path)?;
        record_images(&mut run, &entries)?;
        Extractor::new(&model.config)?.extract_entries(&entries)?.0
    };
    let ev = model.evaluate(&set)?;
    println!("group-level confusion (N2 = {})", model.config.group_size);
    print!("{}", ev.group.to_text());
    println!();
    println!("page-level confusion");
    print!("{}", ev.page.to_text());
    if let Some(dir) = &a.out_dir {
        write_matrix(dir, "group_confusion", &ev.group, &mut run)?;
        write_matrix(dir, "page_confusion", &ev.page, &mut run)?;
        let summary = Summary {
            classes: model.classes(),
            group_samples: ev.group.total(),
            pages: ev.page.total(),
            group_average_accuracy: ev.group.average_accuracy(),
            page_average_accuracy: ev.page.average_accuracy(),
            group_per_class: ev.group.per_class_accuracy(),
            page_per_class: ev.page.per_class_accuracy(),
        };
        let path = dir.join("summary.json");
        write_atomic(&path, (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
        run.add_output(&path);
        run.write(&dir.join("evaluate.run.json"))?;
    }
    Ok(())
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let mut run = RunManifest::new("inspect", &cfg, cfg.hash());
    let pages: Vec<(String, PathBuf)> = if let Some(image) = &a.image {
        let id = image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "page".into());
        vec![(id, image.clone())]
    } else {
        let path = a.manifest.as_ref().expect("clap requires --image or --manifest");
        run.add_input(path)?;
        load_manifest(path)?
            .entries()
            .iter()
            .map(|e| (e.page_id.clone(), e.path.clone()))
            .collect()
    };
    let mut boxes = String::from("page_id,index,x,y,w,h,area\n");
    let outcomes: Vec<printid::Result<(String, String, Vec<PathBuf>)>> = pages
        .par_iter()
        .map(|(id, path)| {
            let img = ingest::crop_margins(&load_page(path)?, cfg.crop_fraction)?;
            let letters = find_letters(&img)?;
            let mut rows = String::new();
            for l in &letters {
                let b = l.bbox;
                writeln!(rows, "{id},{},{},{},{},{},{}", l.index, b.x, b.y, b.w, b.h, l.area).unwrap();
            }
            let mut line = format!("{id}: {} letters", letters.len());
            let mut written = Vec::new();
            if a.regions {
                let dir = a.out_dir.join(format!("{id}_regions"));
                for l in &letters {
                    let Ok(region) = separate_letter(&img, l, cfg.alpha, cfg.beta) else { continue };
                    let out = dir.join(format!("{:04}.png", l.index));
                    ingest::save_rgb(region.bbox.w, region.bbox.h, false_colour(&region), &out)?;
                    written.push(out);
                }
                write!(line, ", {} segmented", written.len()).unwrap();
            }
            Ok((rows, line, written))
        })
        .collect();
    let mut region_maps = Vec::new();
    for (o, (_, path)) in outcomes.into_iter().zip(&pages) {
        let (rows, line, written) = o?;
        run.add_input(path)?;
        boxes.push_str(&rows);
        region_maps.extend(written);
        println!("{line}");
    }
    let boxes_path = a.out_dir.join("boxes.csv");
    write_atomic(&boxes_path, boxes.as_bytes())?;
    run.add_output(&boxes_path);
    for p in &region_maps {
        run.add_output(p);
    }
    run.write(&a.out_dir.join("inspect.run.json"))?;
    Ok(())
}
