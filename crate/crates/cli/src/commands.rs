use std::fs;
use std::path::Path;

use grasp_dlsr::bundle::{load_bundle, save_bundle, ArtifactBundle};
use grasp_dlsr::dataset::{PatchBatch, SplitMode, PATCH_LEN};
use grasp_dlsr::dictlearn::{learn_dictionary, natural_encoder_for, DictMethod, SIZE_SWEEP};
use grasp_dlsr::evaluation::{
    dataset_hash, detect_best_grasp, fit_codebook, ids_hash, modal_hyperparams, run_detection_eval,
    run_recognition_cv, train_pipeline, EncoderChoice, GridSearchFactory, PreparedScene,
    RecognitionReport, TrainConfig,
};
use grasp_dlsr::features::{Codebook, EncoderKind};
use grasp_dlsr::render::{write_atom_mosaics, write_overlay};
use grasp_dlsr::synth::{generate, write_dataset, SynthConfig};
use grasp_dlsr::whitening::Whitener;
use serde_json::{json, Value};

use crate::data;
use crate::report::{self, manifest, to_value, write_json, write_manifest, write_text};
use crate::settings::Settings;
use crate::{Cli, Command, Failure, HyperArgs, SplitArg, SynthKind, WhiteningArg};

pub fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let mut settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Preprocess { data, out } => {
            preprocess(&settings, &data.data, data.cache.as_deref(), &out)
        }
        Command::LearnDict {
            data,
            cache,
            method,
            self_taught,
            overrides,
            out,
        } => {
            settings.apply(&overrides);
            if let Some(m) = method {
                settings.dict = m;
            }
            learn_dict(
                &settings,
                data.as_deref(),
                cache.as_deref(),
                self_taught.as_deref(),
                &out,
            )
        }
        Command::Train {
            data,
            hyper,
            self_taught,
            overrides,
            out,
        } => {
            settings.apply(&overrides);
            train(
                &settings,
                &data.data,
                data.cache.as_deref(),
                &hyper,
                self_taught.as_deref(),
                &out,
            )
        }
        Command::RecognizeCv {
            data,
            dict,
            encoder,
            self_taught,
            overrides,
            out,
        } => {
            settings.apply(&overrides);
            let dicts = match dict {
                Some(list) => parse_dicts(&list)?,
                None => vec![settings.dict],
            };
            let encoders = match encoder {
                Some(list) => parse_encoders(&list)?,
                None => vec![settings.encoder],
            };
            recognize_cv(
                &settings,
                &data.data,
                data.cache.as_deref(),
                &dicts,
                &encoders,
                self_taught.as_deref(),
                &out,
            )
        }
        Command::Sweep {
            data,
            dict,
            encoder,
            sizes,
            whitening,
            overrides,
            out,
        } => {
            settings.apply(&overrides);
            if let Some(d) = dict {
                settings.dict = d;
            }
            if let Some(e) = encoder {
                settings.encoder = e;
            }
            let sizes = sizes.unwrap_or(SIZE_SWEEP.to_vec());
            sweep(
                &settings,
                &data.data,
                data.cache.as_deref(),
                &sizes,
                whitening,
                &out,
            )
        }
        Command::Detect {
            data,
            scene,
            model,
            overlay,
            out,
        } => detect(
            &settings,
            &data.data,
            data.cache.as_deref(),
            &scene,
            &model,
            overlay.as_deref(),
            out.as_deref(),
        ),
        Command::DetectCv {
            data,
            hyper,
            split,
            self_taught,
            folds,
            overrides,
            out,
        } => {
            settings.apply(&overrides);
            settings.split = match split {
                SplitArg::Image => SplitMode::ImageWise,
                SplitArg::Object => SplitMode::ObjectWise,
            };
            if let Some(k) = folds {
                settings.detection_folds = k;
            }
            detect_cv(
                &settings,
                &data.data,
                data.cache.as_deref(),
                &hyper,
                self_taught.as_deref(),
                &out,
            )
        }
        Command::ExportAtoms {
            model,
            centroids,
            scale,
            out,
        } => export_atoms(&model, centroids, scale, &out),
        Command::Synth {
            kind,
            scenes,
            seed,
            out,
        } => synth(kind, scenes, seed, &out),
    }
}

fn parse_dicts(list: &[String]) -> Result<Vec<DictMethod>, Failure> {
    if list.iter().any(|s| s.eq_ignore_ascii_case("all")) {
        return Ok(DictMethod::ALL.to_vec());
    }
    list.iter()
        .map(|s| s.parse().map_err(Failure::Usage))
        .collect()
}

fn parse_encoders(list: &[String]) -> Result<Vec<EncoderChoice>, Failure> {
    if list.iter().any(|s| s.eq_ignore_ascii_case("all")) {
        return Ok(report::ENCODER_COLUMNS.to_vec());
    }
    list.iter()
        .map(|s| s.parse().map_err(Failure::Usage))
        .collect()
}

fn check_combo(dict: DictMethod, encoder: EncoderChoice) -> Result<(), Failure> {
    if encoder == EncoderChoice::Fixed(EncoderKind::KmeansTri) && dict != DictMethod::Nkm {
        return Err(Failure::Usage(format!(
            "the kmeanstri encoder needs raw centroids, which only the nkm learner produces (got {dict})"
        )));
    }
    Ok(())
}

/// Auxiliary scenes plus their manifest entry. An empty directory falls back
/// to the standard protocol and says so.
fn aux_scenes(dir: Option<&Path>) -> Result<(Option<Vec<PreparedScene>>, Value), Failure> {
    let Some(dir) = dir else {
        return Ok((None, Value::Null));
    };
    let aux = data::load_aux(dir)?;
    if aux.is_empty() {
        eprintln!(
            "note: {} holds no auxiliary scenes; running the standard protocol",
            dir.display()
        );
        return Ok((None, json!({ "scenes": 0, "used": false })));
    }
    let entry = json!({ "scenes": aux.len(), "hash": dataset_hash(&aux), "used": true });
    Ok((Some(aux), entry))
}

fn base_manifest(
    command: &str,
    settings: &Settings,
    scenes: &[PreparedScene],
    aux: Value,
) -> std::collections::BTreeMap<String, Value> {
    let mut m = manifest(command, settings);
    m.insert("dataset_hash".into(), Value::from(dataset_hash(scenes)));
    m.insert("scenes".into(), Value::from(scenes.len()));
    m.insert("self_taught".into(), aux);
    m
}

fn preprocess(
    settings: &Settings,
    root: &Path,
    cache: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let scenes = data::load_prepared(root, cache)?;
    let files = data::write_cache(&scenes, out)?;
    let mut m = base_manifest("preprocess", settings, &scenes, Value::Null);
    m.insert("files".into(), to_value(&files));
    let dropped: usize = scenes.iter().map(|s| s.scene.dropped_rects).sum();
    m.insert("dropped_rects".into(), Value::from(dropped));
    write_manifest(&out.join("preprocess.json"), m)?;
    println!("cached {} scenes in {}", files.len(), out.display());
    if dropped > 0 {
        println!("{dropped} malformed rectangles were dropped while loading");
    }
    Ok(())
}

fn learn_dict(
    settings: &Settings,
    root: Option<&Path>,
    cache: Option<&Path>,
    self_taught: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    settings.validate()?;
    let dcfg = settings.dict_config(settings.dict);
    let mut m = manifest("learn-dict", settings);
    let (whitener, learned) = match root {
        None if dcfg.method == DictMethod::R => {
            let learned = learn_dictionary(&PatchBatch::with_capacity(0), &dcfg)?;
            (Whitener::identity(PATCH_LEN), learned)
        }
        None => {
            return Err(Failure::Usage(format!(
                "learning a {} dictionary needs --data (or DLSR_DATA)",
                dcfg.method
            )))
        }
        Some(root) => {
            let scenes = data::load_prepared(root, cache)?;
            let (aux, aux_entry) = aux_scenes(self_taught)?;
            let (wh, learned, _) =
                fit_codebook(&scenes, aux.as_deref(), &settings.front_end, &dcfg)?;
            m.insert("dataset_hash".into(), Value::from(dataset_hash(&scenes)));
            m.insert("scenes".into(), Value::from(scenes.len()));
            m.insert("self_taught".into(), aux_entry);
            (wh, learned)
        }
    };
    m.insert("objective_trace".into(), to_value(&learned.trace));
    let bundle = ArtifactBundle {
        codebook: learned.codebook,
        whitener,
        encoder: Some(natural_encoder_for(&dcfg)),
        model: None,
        manifest: m,
    };
    save_bundle(&bundle, out)?;
    println!(
        "{} dictionary with {} atoms written to {}",
        dcfg.method,
        bundle.codebook.atoms(),
        out.display()
    );
    Ok(())
}

/// Training config for fixed hyperparameters, plus the resolved
/// `(dictionary, encoder, sparsity, C)` for the manifest.
fn resolve_train(settings: &Settings, hyper: &HyperArgs) -> Result<(TrainConfig, Value), Failure> {
    settings.validate()?;
    let method = hyper.dict.unwrap_or(settings.dict);
    let encoder = hyper.encoder.unwrap_or(settings.encoder);
    check_combo(method, encoder)?;
    let (sparsity, c) = match &hyper.from_report {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            let reports: Vec<RecognitionReport> = serde_json::from_str(&text)
                .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            let r = reports
                .iter()
                .find(|r| r.dict == method && r.encoder == encoder)
                .ok_or_else(|| {
                    Failure::Data(format!(
                        "{}: no result for {method} with {encoder}",
                        path.display()
                    ))
                })?;
            let (s, c) = modal_hyperparams(r);
            (Some(s), c)
        }
        None => (
            hyper.sparsity.or(settings.sparsity),
            hyper.c.or(settings.c).unwrap_or(settings.c_grid[0]),
        ),
    };
    if !(c.is_finite() && c > 0.0) {
        return Err(Failure::Usage(format!("C must be positive, got {c}")));
    }
    let mut exp = settings.experiment(method, encoder);
    if let Some(s) = sparsity {
        exp.sparsity_grid = Some(vec![s]);
    }
    let (s, dict, enc) = exp
        .candidates()
        .into_iter()
        .next()
        .ok_or_else(|| Failure::Usage("empty sparsity grid".into()))?;
    dict.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let cfg = TrainConfig {
        dict,
        encoder: enc,
        c,
        front_end: settings.front_end,
        lbfgs: settings.lbfgs,
    };
    let entry = json!({ "dict": method, "encoder": encoder, "sparsity": s, "c": c });
    Ok((cfg, entry))
}

fn train(
    settings: &Settings,
    root: &Path,
    cache: Option<&Path>,
    hyper: &HyperArgs,
    self_taught: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let (cfg, hp) = resolve_train(settings, hyper)?;
    let scenes = data::load_prepared(root, cache)?;
    let (aux, aux_entry) = aux_scenes(self_taught)?;
    let pipeline = train_pipeline(&scenes, aux.as_deref(), &cfg)?;
    let mut m = base_manifest("train", settings, &scenes, aux_entry);
    m.insert("hyperparameters".into(), hp);
    m.insert("train".into(), to_value(&cfg));
    m.insert(
        "train_hash".into(),
        Value::from(ids_hash(scenes.iter().map(|s| s.scene.id.as_str()))),
    );
    save_bundle(&ArtifactBundle::from_pipeline(&pipeline, m), out)?;
    println!("model written to {}", out.display());
    Ok(())
}

fn recognize_cv(
    settings: &Settings,
    root: &Path,
    cache: Option<&Path>,
    dicts: &[DictMethod],
    encoders: &[EncoderChoice],
    self_taught: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    settings.validate()?;
    let combos: Vec<(DictMethod, EncoderChoice)> = dicts
        .iter()
        .flat_map(|&d| encoders.iter().map(move |&e| (d, e)))
        .filter(|&(d, e)| check_combo(d, e).is_ok())
        .collect();
    if combos.is_empty() {
        return Err(Failure::Usage(
            "no valid dictionary/encoder combination requested".into(),
        ));
    }
    let scenes = data::load_prepared(root, cache)?;
    let (aux, aux_entry) = aux_scenes(self_taught)?;
    let mut reports = Vec::with_capacity(combos.len());
    for (d, e) in &combos {
        log::info!("recognition: {d} dictionary, {e} encoder");
        let exp = settings.experiment(*d, *e);
        let r = run_recognition_cv(&scenes, aux.as_deref(), &exp)?;
        log::info!("{d}/{e}: {:.2}% ± {:.2}", 100.0 * r.mean, 100.0 * r.std);
        reports.push(r);
    }
    let table = report::recognition_table(&reports);
    write_text(&out.join("recognition.tsv"), &table)?;
    write_json(&out.join("recognition.json"), &to_value(&reports))?;
    let mut m = base_manifest("recognize-cv", settings, &scenes, aux_entry);
    m.insert("combinations".into(), to_value(&combos));
    write_manifest(&out.join("manifest.json"), m)?;
    print!("{table}");
    Ok(())
}

fn sweep(
    settings: &Settings,
    root: &Path,
    cache: Option<&Path>,
    sizes: &[usize],
    whitening: WhiteningArg,
    out: &Path,
) -> Result<(), Failure> {
    settings.validate()?;
    check_combo(settings.dict, settings.encoder)?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Failure::Usage("sizes must be positive".into()));
    }
    let states: &[bool] = match whitening {
        WhiteningArg::On => &[true],
        WhiteningArg::Off => &[false],
        WhiteningArg::Both => &[true, false],
    };
    let scenes = data::load_prepared(root, cache)?;
    let mut rows = Vec::new();
    let mut table = String::from("atoms");
    for &w in states {
        table.push_str(if w { "\twhitened" } else { "\tunwhitened" });
    }
    table.push('\n');
    for &atoms in sizes {
        table.push_str(&atoms.to_string());
        for &w in states {
            let mut s = settings.clone();
            s.atoms = atoms;
            s.front_end.whitening = w;
            log::info!("sweep: {atoms} atoms, whitening {w}");
            let r = run_recognition_cv(&scenes, None, &s.experiment(s.dict, s.encoder))?;
            table.push_str(&format!("\t{:.2} ± {:.2}", 100.0 * r.mean, 100.0 * r.std));
            rows.push(json!({ "atoms": atoms, "whitening": w, "report": to_value(&r) }));
        }
        table.push('\n');
    }
    write_text(&out.join("sweep.tsv"), &table)?;
    write_json(&out.join("sweep.json"), &Value::Array(rows))?;
    let mut m = base_manifest("sweep", settings, &scenes, Value::Null);
    m.insert("sizes".into(), to_value(sizes));
    m.insert("whitening".into(), to_value(&states));
    write_manifest(&out.join("manifest.json"), m)?;
    print!("{table}");
    Ok(())
}

fn detect(
    settings: &Settings,
    root: &Path,
    cache: Option<&Path>,
    id: &str,
    model: &Path,
    overlay: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let bundle =
        load_bundle(model).map_err(|e| Failure::Data(format!("{}: {e}", model.display())))?;
    let pipeline = bundle.pipeline().ok_or_else(|| {
        Failure::Data(format!(
            "{}: bundle holds no trained model",
            model.display()
        ))
    })?;
    let scene = data::load_one(root, id, cache)?;
    let det = detect_best_grasp(&scene, &pipeline, &settings.grid, &settings.ransac)
        .map_err(|e| Failure::Data(format!("{id}: {e}")))?;
    let r = det.rect;
    println!(
        "{id}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.x, r.y, r.theta, r.w, r.h, det.score
    );
    if let Some(path) = overlay {
        write_overlay(&scene.scene, &r, path)?;
    }
    if let Some(path) = out {
        let v = json!({
            "scene": id,
            "rect": to_value(&r),
            "score": det.score,
            "candidates": det.candidates,
            "region": [det.region.x_min, det.region.y_min, det.region.x_max, det.region.y_max],
        });
        write_json(path, &v)?;
    }
    Ok(())
}

fn detect_cv(
    settings: &Settings,
    root: &Path,
    cache: Option<&Path>,
    hyper: &HyperArgs,
    self_taught: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let (cfg, hp) = resolve_train(settings, hyper)?;
    let scenes = data::load_prepared(root, cache)?;
    let (aux, aux_entry) = aux_scenes(self_taught)?;
    let factory = GridSearchFactory {
        train: cfg,
        aux: aux.as_deref(),
        spec: settings.grid.clone(),
        ransac: settings.ransac,
    };
    let rep = run_detection_eval(
        &scenes,
        &factory,
        settings.split,
        settings.detection_folds,
        settings.seed,
    )?;
    let dict = hyper.dict.unwrap_or(settings.dict);
    let encoder = hyper.encoder.unwrap_or(settings.encoder);
    let table = report::detection_table(dict, encoder, &rep);
    write_text(&out.join("detection.tsv"), &table)?;
    write_text(
        &out.join("detection_scenes.tsv"),
        &report::outcomes_table(&rep.outcomes),
    )?;
    write_json(&out.join("detection.json"), &to_value(&rep))?;
    let mut m = base_manifest("detect-cv", settings, &scenes, aux_entry);
    m.insert("hyperparameters".into(), hp);
    m.insert("train".into(), to_value(&cfg));
    write_manifest(&out.join("manifest.json"), m)?;
    print!("{table}");
    println!("{} of {} scenes detected", rep.successes, rep.evaluated);
    Ok(())
}

fn export_atoms(model: &Path, centroids: bool, scale: u32, out: &Path) -> Result<(), Failure> {
    let bundle =
        load_bundle(model).map_err(|e| Failure::Data(format!("{}: {e}", model.display())))?;
    let Codebook {
        dictionary,
        centroids: raw,
    } = &bundle.codebook;
    let atoms = match (centroids, raw) {
        (false, _) => dictionary.atoms(),
        (true, Some(c)) => c,
        (true, None) => {
            return Err(Failure::Data(format!(
                "{}: bundle holds no raw centroids",
                model.display()
            )));
        }
    };
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    for f in write_atom_mosaics(atoms, scale, out, "atoms")? {
        println!("{}", out.join(f).display());
    }
    Ok(())
}

fn synth(kind: SynthKind, scenes: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    if scenes == 0 {
        return Err(Failure::Usage("--scenes must be positive".into()));
    }
    let cfg = match kind {
        SynthKind::Recognition => SynthConfig::recognition(scenes, seed),
        SynthKind::Detection => SynthConfig::detection(scenes, seed),
    };
    write_dataset(&generate(&cfg), out)?;
    println!("{scenes} scenes written to {}", out.display());
    Ok(())
}
