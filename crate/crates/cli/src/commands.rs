use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use dfrq::featencode::EncodingSpec;
use dfrq::heightfield::{self, HeightField};
use dfrq::metrics;
use dfrq::neuralnet::{self, Activation, Architecture, NetworkModel, PlateauScheduler, TrainConfig};
use dfrq::rangetransform::RangeTransformSpec;
use dfrq::sampling::{self, DataSplit, DatasetParams, GridLayout, ReflectanceGrid, Scheme};
use dfrq::slicer::{self, ForwardModelSource, ModelSource, SliceSpec};
use dfrq::waveoptics::{self, CoherenceWindow};
use serde_json::{json, Value};

use crate::*;

type Outcome<T = ()> = std::result::Result<T, Failure>;

pub fn run(command: &Command) -> Outcome {
    let mut effective = serde_json::to_value(command).map_err(|e| Failure::Usage(e.to_string()))?;
    eprintln!("effective config: {effective}");
    // Output locations are not part of what an artifact is, so two runs that
    // differ only in where they write produce identical files.
    if let Some(args) = effective.as_object_mut().and_then(|o| o.values_mut().next()).and_then(Value::as_object_mut) {
        args.remove("out");
        args.remove("report");
    }
    match command {
        Command::GenHeightfield(kind) => gen_heightfield(kind),
        Command::GenDataset(a) => gen_dataset(a, effective),
        Command::Train(a) => train(a, effective),
        Command::Slice(a) => slice(a, effective),
        Command::Eval(a) => eval(a, effective),
    }
}

fn check_input(p: &Path) -> Outcome {
    if p.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("input file {} does not exist", p.display())))
    }
}

fn check_output(p: &Path) -> Outcome {
    if p.is_dir() {
        return Err(Failure::Usage(format!("output path {} is a directory", p.display())));
    }
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(Failure::Usage(format!("output directory {} does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}

fn read(p: &Path) -> Outcome<Vec<u8>> {
    fs::read(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
}

fn write(p: &Path, bytes: &[u8]) -> Outcome {
    fs::write(p, bytes).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
}

/// Tags a core error with the file it came from, keeping its class.
fn in_file(p: &Path) -> impl Fn(dfrq::Error) -> Failure + '_ {
    move |e| match Failure::from(e) {
        Failure::Usage(m) => Failure::Usage(format!("{}: {m}", p.display())),
        Failure::Data(m) => Failure::Data(format!("{}: {m}", p.display())),
        Failure::Numeric(m) => Failure::Numeric(format!("{}: {m}", p.display())),
    }
}

fn load_heightfield(p: &Path) -> Outcome<HeightField> {
    HeightField::from_bytes(&read(p)?).map_err(in_file(p))
}

fn load_dataset(p: &Path) -> Outcome<ReflectanceGrid> {
    ReflectanceGrid::from_bytes(&read(p)?).map_err(in_file(p))
}

fn load_model(p: &Path) -> Outcome<NetworkModel> {
    NetworkModel::from_bytes(&read(p)?).map_err(in_file(p))
}

fn to_json(v: &impl serde::Serialize) -> Outcome<String> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Data(e.to_string()))
}

fn gen_heightfield(kind: &HeightfieldKind) -> Outcome {
    let (hf, out) = match kind {
        HeightfieldKind::Blazed(a) => {
            check_output(&a.out)?;
            (heightfield::generate_blazed(a.period_um, a.height_um, a.extent_um, a.samples)?, &a.out)
        }
        HeightfieldKind::Cd(a) => {
            check_output(&a.out)?;
            let hf = heightfield::generate_synthetic_cd(
                a.track_pitch_um,
                a.pit_depth_um,
                a.bit_length_um,
                a.extent_um,
                a.samples,
                a.seed,
            )?;
            (hf, &a.out)
        }
        HeightfieldKind::Random(a) => {
            check_output(&a.out)?;
            let mut hf = heightfield::generate_random(a.max_height_um, a.extent_um, a.samples, a.seed)?;
            if let Some(s) = a.window_sigma_um {
                hf = heightfield::apply_gaussian_window(&hf, s)?;
            }
            (hf, &a.out)
        }
    };
    write(out, &hf.to_bytes())?;
    println!("{}", hf.content_id());
    eprintln!(
        "wrote {} ({}x{} samples, elevation {:.4}..{:.4} um)",
        out.display(),
        hf.samples_x(),
        hf.samples_y(),
        hf.min_elevation(),
        hf.max_elevation()
    );
    Ok(())
}

fn scheme(s: SchemeArg) -> Scheme {
    match s {
        SchemeArg::Regular => Scheme::Regular,
        SchemeArg::Simple => Scheme::Simple,
        SchemeArg::SimpleMax => Scheme::SimpleMax,
    }
}

fn gen_dataset(a: &GenDatasetArgs, effective: Value) -> Outcome {
    check_input(&a.heightfield)?;
    check_output(&a.out)?;
    let hf = load_heightfield(&a.heightfield)?;
    let layout = GridLayout::new(scheme(a.scheme), a.res_u, a.res_v, a.res_w)?;
    let mut params = DatasetParams::new(layout, a.sigma_s_um, a.epsilon);
    params.truncation_sigmas = a.truncation_sigmas;
    params.window()?;
    let spectra = waveoptics::precompute_for_accuracy(&hf, a.epsilon)?;
    eprintln!("Taylor order {} about {:.4} um", spectra.order(), spectra.offset());
    let grid = sampling::build_dataset_with(&spectra, &params, effective)?;
    write(&a.out, &grid.to_bytes()?)?;
    println!(
        "{}",
        json!({
            "out": a.out,
            "samples": grid.valid.len(),
            "invalid_fraction": grid.invalid_fraction(),
            "taylor_order": spectra.order(),
        })
    );
    Ok(())
}

fn parse_list(s: &str, what: &str) -> Outcome<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| Failure::Usage(format!("bad {what} {s:?}: {e}"))))
        .collect()
}

fn parse_encoding(s: &str) -> Outcome<(usize, usize)> {
    match parse_list(s, "encoding")?.as_slice() {
        &[m_uv, m_w] => Ok((m_uv, m_w)),
        &[m_u, m_v, m_w] if m_u == m_v => Ok((m_u, m_w)),
        &[_, _, _] => Err(Failure::Usage(format!("encoding {s:?}: u and v frequencies must match"))),
        _ => Err(Failure::Usage(format!("encoding {s:?}: expected m_uv,m_w or m_u,m_v,m_w"))),
    }
}

fn train(a: &TrainArgs, effective: Value) -> Outcome {
    check_input(&a.dataset)?;
    check_output(&a.out)?;
    let report_path = a.report.clone().unwrap_or_else(|| sibling(&a.out, "report.json"));
    check_output(&report_path)?;

    let (m_uv, m_w) = parse_encoding(&a.encoding)?;
    let activation: Activation = a.activation.parse()?;
    let arch = match &a.hidden {
        Some(h) => Architecture::Explicit { hidden: parse_list(h, "hidden sizes")? },
        None => Architecture::Funnel { first_hidden: a.first_hidden, num_hidden: a.depth, ratio: a.ratio },
    };
    let split = DataSplit::parse(&a.split, a.seed)?;
    let range = RangeTransformSpec::bit_plane_power(a.bmax, a.power)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        scheduler: PlateauScheduler { plateau_patience: a.patience, decay_factor: a.decay, min_lr: a.min_lr },
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;

    let grid = load_dataset(&a.dataset)?;
    let layout = grid.layout();
    split.test_slices(layout.res_w)?;
    let enc = EncodingSpec::for_grid(m_uv, m_w, a.diagonal, layout.res_u.max(layout.res_v), layout.res_w)?;
    let model = NetworkModel::init(enc, range, &arch, activation, a.seed)?;
    eprintln!("layers {:?}, {} parameters", model.layer_sizes(), model.parameter_count());

    let quiet = a.quiet;
    let (mut model, report) = neuralnet::train_with_progress(&grid, &split, model, &cfg, |e| {
        if !quiet {
            let test = e.test_loss.map_or_else(|| "-".to_string(), |t| format!("{t:.6e}"));
            eprintln!("epoch {:>4} train {:.6e} test {test} lr {:.3e}", e.epoch, e.train_loss, e.learning_rate);
        }
    })?;
    model.provenance = json!({
        "layout": layout,
        "dataset": {
            "path": a.dataset,
            "heightfield_id": grid.meta.heightfield_id,
            "sigma_s_um": grid.meta.sigma_s_um,
            "epsilon": grid.meta.epsilon,
            "taylor_order": grid.meta.taylor_order,
        },
        "split": split,
        "architecture": arch,
        "train_config": cfg,
        "command": effective,
    });
    write(&a.out, &model.to_bytes()?)?;
    write(&report_path, to_json(&report)?.as_bytes())?;
    println!(
        "{}",
        json!({
            "out": a.out,
            "report": report_path,
            "parameter_count": model.parameter_count(),
            "final_train_loss": report.final_train_loss(),
            "final_test_loss": report.final_test_loss(),
            "wall_time_s": report.wall_time_s,
        })
    );
    Ok(())
}

/// The same path with its extension replaced by (or extended with) `ext`.
fn sibling(p: &Path, ext: &str) -> PathBuf {
    p.with_extension(ext)
}

fn slice(a: &SliceArgs, effective: Value) -> Outcome {
    check_output(&a.out)?;
    let (im_path, meta_path) = (sibling(&a.out, "im"), sibling(&a.out, "json"));
    let mut spec = SliceSpec::new(a.theta_i, a.phi_i, a.res, a.exposure)?;
    spec.attenuation.ior = a.ior;
    spec.attenuation.include_fresnel = a.fresnel;
    spec.validate()?;

    let image = match a.source {
        SourceArg::Model => {
            let path = a.model.as_deref().ok_or_else(|| Failure::Usage("--source model needs --model".into()))?;
            if a.heightfield.is_some() || a.dataset.is_some() {
                return Err(Failure::Usage("--heightfield and --dataset only apply to --source dataset-gt".into()));
            }
            check_input(path)?;
            let model = load_model(path)?;
            let source = ModelSource::new(&model);
            slicer::render_slice(&source, &spec)?
        }
        SourceArg::DatasetGt => {
            let hf_path = a
                .heightfield
                .as_deref()
                .ok_or_else(|| Failure::Usage("--source dataset-gt needs --heightfield".into()))?;
            if a.model.is_some() {
                return Err(Failure::Usage("--model only applies to --source model".into()));
            }
            check_input(hf_path)?;
            if let Some(d) = &a.dataset {
                check_input(d)?;
            }
            let hf = load_heightfield(hf_path)?;
            let (window, epsilon) = match &a.dataset {
                Some(d) => {
                    let grid = load_dataset(d)?;
                    if grid.meta.heightfield_id != hf.content_id() {
                        return Err(Failure::Data(format!(
                            "{} was not generated from {}",
                            d.display(),
                            hf_path.display()
                        )));
                    }
                    (grid.meta.params().window()?, grid.meta.epsilon)
                }
                None => (
                    CoherenceWindow::new(a.sigma_s_um.unwrap_or(16.25))?,
                    a.epsilon.unwrap_or(1e-6),
                ),
            };
            let spectra = waveoptics::precompute_for_accuracy(&hf, epsilon)?;
            let source = ForwardModelSource { spectra: &spectra, window };
            slicer::render_slice(&source, &spec)?
        }
    };

    let mut ppm = BufWriter::new(fs::File::create(&a.out).map_err(|e| Failure::Data(format!("{}: {e}", a.out.display())))?);
    image.write_ppm(&mut ppm)?;
    drop(ppm);
    write(&im_path, &image.sidecar_bytes())?;
    let mut meta = image.provenance();
    meta["command"] = effective;
    write(&meta_path, to_json(&meta)?.as_bytes())?;
    println!(
        "{}",
        json!({"ppm": a.out, "sidecar": im_path, "metadata": meta_path, "coverage_fraction": image.coverage_fraction()})
    );
    if image.coverage_fraction() < 1.0 {
        eprintln!(
            "note: {:.1}% of the slice lies outside the source's sampled domain",
            100.0 * (1.0 - image.coverage_fraction())
        );
    }
    Ok(())
}

/// Exposure recorded in a slice's `.json` metadata, if any.
fn recorded_exposure(im: &Path) -> Option<f64> {
    let text = fs::read_to_string(sibling(im, "json")).ok()?;
    let v: Value = serde_json::from_str(&text).ok()?;
    v.pointer("/spec/exposure_ru")?.as_f64()
}

fn eval(a: &EvalArgs, effective: Value) -> Outcome {
    if let Some(r) = &a.report {
        check_output(r)?;
    }
    let mut record = match (&a.gt_slice, &a.pred_slice, &a.dataset) {
        (Some(gt_path), Some(pred_path), None) => {
            check_input(gt_path)?;
            check_input(pred_path)?;
            let exposure = match a.exposure {
                Some(e) => e,
                None => {
                    let (g, p) = (recorded_exposure(gt_path), recorded_exposure(pred_path));
                    match (g, p) {
                        (Some(g), Some(p)) if g == p => g,
                        (Some(g), Some(p)) => {
                            return Err(Failure::Data(format!("slices were exposed differently ({g} vs {p})")))
                        }
                        _ => return Err(Failure::Usage("no slice metadata found; pass --exposure".into())),
                    }
                }
            };
            let gt = slicer::read_image(&read(gt_path)?, exposure).map_err(in_file(gt_path))?;
            let pred = slicer::read_image(&read(pred_path)?, exposure).map_err(in_file(pred_path))?;
            if gt.mask != pred.mask {
                return Err(Failure::Data("slice masks disagree".into()));
            }
            metrics::report(&gt, &pred)?
        }
        (None, None, Some(ds_path)) => {
            let (model_path, w) = (a.model.as_deref().unwrap(), a.w_slice.unwrap());
            check_input(ds_path)?;
            check_input(model_path)?;
            let grid = load_dataset(ds_path)?;
            let model = load_model(model_path)?;
            if w == 0 || w > grid.layout().res_w {
                return Err(Failure::Usage(format!("--w-slice {w} outside 1..={}", grid.layout().res_w)));
            }
            let (gt, pred) = slicer::grid_slice_images(&grid, &model, w - 1, a.exposure.unwrap_or(2000.0))?;
            metrics::report(&gt, &pred)?
        }
        _ => {
            return Err(Failure::Usage(
                "eval needs either --gt-slice and --pred-slice, or --dataset, --model and --w-slice".into(),
            ))
        }
    };
    record.context = json!({ "command": effective });
    let line = record.to_json_line()?;
    if let Some(r) = &a.report {
        write(r, format!("{line}\n").as_bytes())?;
    }
    println!("{line}");
    Ok(())
}
