//! Command implementations. Flags take precedence over the config file,
//! which takes precedence over built-in defaults.

use std::io::Write;
use std::path::Path;

use gc_core::binding::BindingConfig;
use gc_core::metrics::{evaluate, Level};
use gc_core::pipeline::{compare_modes, format_comparison_table, track, Mode, PipelineConfig};
use gc_core::saliency::{compute_saliency, select_seeds, SaliencyConfig, Strategy};
use gc_core::synth::{generate_scene, SceneSpec};
use gc_core::tensor::{read_tensor, write_tensor, FeatureSequence, Tensor};
use gc_core::{Error, Result};

use crate::config::FileConfig;
use crate::{
    BindingFlags, CompareArgs, DiagnoseArgs, EvalArgs, GenArgs, PipelineFlags, SaliencyArgs,
    SaliencyFlags, TrackArgs,
};

fn parse_with<T: std::str::FromStr<Err = Error>>(value: Option<&str>) -> Result<Option<T>> {
    value.map(str::parse).transpose()
}

fn merged_saliency(flags: &SaliencyFlags, file: &FileConfig) -> Result<SaliencyConfig> {
    let section = file.saliency();
    let defaults = SaliencyConfig::default();
    let strategy: Option<Strategy> =
        parse_with(flags.strategy.as_deref())?.or(parse_with(section.strategy.as_deref())?);
    let cfg = SaliencyConfig {
        alpha: flags.alpha.or(section.alpha).unwrap_or(defaults.alpha),
        radius: flags.radius.or(section.radius).unwrap_or(defaults.radius),
        strategy: strategy.unwrap_or(defaults.strategy),
        pca_components: flags
            .pca_components
            .or(section.pca_components)
            .unwrap_or(defaults.pca_components),
        include_center: if flags.include_center {
            true
        } else {
            section.include_center.unwrap_or(defaults.include_center)
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn merged_binding(flags: &BindingFlags, file: &FileConfig, mode: Mode) -> Result<BindingConfig> {
    let section = file.binding();
    let (default_first, default_rest) = mode.default_iterations();
    let rule = parse_with(flags.update_rule.as_deref())?
        .or(parse_with(section.update_rule.as_deref())?)
        .unwrap_or(gc_core::binding::UpdateRule::WeightedMean);
    let cfg = BindingConfig {
        iterations_first: flags
            .iters_first
            .or(section.iters_first)
            .unwrap_or(default_first),
        iterations_rest: flags
            .iters_rest
            .or(section.iters_rest)
            .unwrap_or(default_rest),
        temperature: flags.temperature.or(section.temperature),
        update_rule: rule,
        weights_path: flags.weights.clone().or(section.weights_path),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn merged_pipeline(
    pipeline: &PipelineFlags,
    saliency: &SaliencyFlags,
    binding: &BindingFlags,
    file: &FileConfig,
) -> Result<(PipelineConfig, bool)> {
    let section = file.pipeline();
    let mode: Mode = parse_with(pipeline.mode.as_deref())?
        .or(parse_with(section.mode.as_deref())?)
        .unwrap_or(Mode::GroundedCorrespondence);
    let k = pipeline
        .k
        .or(section.k)
        .ok_or_else(|| Error::config("slot count is required: pass --k or set pipeline.k"))?;
    let cfg = PipelineConfig {
        mode,
        saliency: merged_saliency(saliency, file)?,
        binding: merged_binding(binding, file, mode)?,
        k,
        seed: pipeline.seed.or(section.seed).unwrap_or(0),
    };
    cfg.validate()?;
    let pre_normalize = if pipeline.pre_normalize {
        true
    } else {
        section.pre_normalize.unwrap_or(false)
    };
    Ok((cfg, pre_normalize))
}

fn load_features(path: &Path, pre_normalize: bool) -> Result<FeatureSequence> {
    let seq = read_tensor(path)?.into_feature_sequence()?;
    Ok(if pre_normalize {
        seq.l2_normalized()
    } else {
        seq
    })
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let section = file.scene();
    let defaults = SceneSpec::default();
    let spec = SceneSpec {
        height: args.height.or(section.height).unwrap_or(defaults.height),
        width: args.width.or(section.width).unwrap_or(defaults.width),
        dim: args.dim.or(section.dim).unwrap_or(defaults.dim),
        num_objects: args.objects.or(section.objects).ok_or_else(|| {
            Error::config("object count is required: pass --objects or set scene.objects")
        })?,
        frames: args.frames.or(section.frames).unwrap_or(defaults.frames),
        object_radius_range: (
            args.radius_min
                .or(section.radius_min)
                .unwrap_or(defaults.object_radius_range.0),
            args.radius_max
                .or(section.radius_max)
                .unwrap_or(defaults.object_radius_range.1),
        ),
        speed_range: (
            args.speed_min
                .or(section.speed_min)
                .unwrap_or(defaults.speed_range.0),
            args.speed_max
                .or(section.speed_max)
                .unwrap_or(defaults.speed_range.1),
        ),
        noise_sigma: args.noise.or(section.noise).unwrap_or(defaults.noise_sigma),
        feature_separation: args
            .separation
            .or(section.separation)
            .unwrap_or(defaults.feature_separation),
        seed: args.seed.or(section.seed).unwrap_or(defaults.seed),
        allow_overlap: args.allow_overlap || section.allow_overlap.unwrap_or(false),
        symmetric_prototypes: args.symmetric_prototypes
            || section.symmetric_prototypes.unwrap_or(false),
    };
    let truth = generate_scene(&spec)?;

    let out_dir = &args.out_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_tensor(
        out_dir.join("features.gct"),
        &Tensor::FeatureSequence(truth.features.clone()),
    )?;
    write_tensor(
        out_dir.join("labels.gct"),
        &Tensor::LabelSequence(truth.labels.clone()),
    )?;
    let manifest = serde_json::json!({
        "spec": spec,
        "prototypes": truth.prototypes,
        "trajectories": truth.trajectories,
    });
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest is plain data") + "\n",
    )
    .map_err(|e| Error::io(&manifest_path, e))?;
    eprintln!(
        "wrote {}, {}, {}",
        out_dir.join("features.gct").display(),
        out_dir.join("labels.gct").display(),
        manifest_path.display()
    );
    Ok(())
}

pub fn cmd_saliency(args: &SaliencyArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let cfg = merged_saliency(&args.saliency, &file)?;
    let pre_normalize = args.pre_normalize || file.pipeline().pre_normalize.unwrap_or(false);
    let seq = load_features(&args.features, pre_normalize)?;

    let mut field_frames = Vec::with_capacity(seq.len());
    let mut seed_frames = Vec::with_capacity(seq.len());
    for map in seq.frames() {
        let field = compute_saliency(map, &cfg)?;
        if let Some(k) = args.k {
            seed_frames.push(select_seeds(map, &field, k)?);
        }
        field_frames.push(field.to_feature_map());
    }

    let out_dir = &args.out_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let field_path = out_dir.join("saliency.gct");
    if field_frames.len() == 1 {
        let only = field_frames.into_iter().next().expect("checked length");
        write_tensor(&field_path, &Tensor::Features(only))?;
    } else {
        write_tensor(
            &field_path,
            &Tensor::FeatureSequence(FeatureSequence::new(field_frames)?),
        )?;
    }
    let mut written = vec![field_path.display().to_string()];
    if let Some(k) = args.k {
        let seeds_json = serde_json::json!({
            "k": k,
            "frames": seed_frames
                .iter()
                .map(|s| s.seeds().to_vec())
                .collect::<Vec<_>>(),
        });
        let seeds_path = out_dir.join("seeds.json");
        std::fs::write(
            &seeds_path,
            serde_json::to_string_pretty(&seeds_json).expect("seeds are plain data") + "\n",
        )
        .map_err(|e| Error::io(&seeds_path, e))?;
        written.push(seeds_path.display().to_string());
    }
    eprintln!("wrote {}", written.join(", "));
    Ok(())
}

pub fn cmd_track(args: &TrackArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let (cfg, pre_normalize) =
        merged_pipeline(&args.pipeline, &args.saliency, &args.binding, &file)?;
    let seq = load_features(&args.features, pre_normalize)?;
    let result = track(&seq, &cfg)?;

    let out_dir = &args.out_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let masks_path = out_dir.join("masks.gct");
    write_tensor(&masks_path, &Tensor::LabelSequence(result.masks))?;
    let diag_path = out_dir.join("diagnostics.jsonl");
    let mut out = Vec::new();
    for d in &result.diagnostics {
        serde_json::to_writer(&mut out, d).expect("diagnostic records are plain data");
        out.push(b'\n');
    }
    std::fs::write(&diag_path, out).map_err(|e| Error::io(&diag_path, e))?;
    eprintln!("wrote {}, {}", masks_path.display(), diag_path.display());
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let pred = read_tensor(&args.pred)?.into_segmentation_sequence()?;
    let truth = read_tensor(&args.truth)?.into_segmentation_sequence()?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let payload = match args.level.as_str() {
        "image" => serde_json::to_value(evaluate(&pred, &truth, Level::Image)?),
        "video" => serde_json::to_value(evaluate(&pred, &truth, Level::Video)?),
        "both" => serde_json::to_value(serde_json::json!({
            "image": evaluate(&pred, &truth, Level::Image)?,
            "video": evaluate(&pred, &truth, Level::Video)?,
        })),
        other => {
            return Err(Error::config(format!(
                "unknown level {other:?} (image|video|both)"
            )))
        }
    }
    .expect("reports are plain data");
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&payload).expect("plain data")
    )
    .map_err(|e| Error::io("stdout", e))?;
    Ok(())
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let (cfg, pre_normalize) =
        merged_pipeline(&args.pipeline, &args.saliency, &args.binding, &file)?;
    let seq = load_features(&args.features, pre_normalize)?;
    let result = track(&seq, &cfg)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for d in &result.diagnostics {
        let line = serde_json::to_string(d).expect("diagnostic records are plain data");
        writeln!(out, "{line}").map_err(|e| Error::io("stdout", e))?;
    }
    Ok(())
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let (cfg, pre_normalize) =
        merged_pipeline(&args.pipeline, &args.saliency, &args.binding, &file)?;
    let seq = load_features(&args.features, pre_normalize)?;
    let truth = read_tensor(&args.truth)?.into_segmentation_sequence()?;
    let modes: Vec<Mode> = match &args.modes {
        None => Mode::ALL.to_vec(),
        Some(list) => list
            .split(',')
            .map(|m| m.trim().parse())
            .collect::<Result<_>>()?,
    };
    let rows = compare_modes(&seq, &truth, &modes, &cfg)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if args.json {
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&rows).expect("comparison rows are plain data")
        )
        .map_err(|e| Error::io("stdout", e))?;
    } else {
        write!(out, "{}", format_comparison_table(&rows)).map_err(|e| Error::io("stdout", e))?;
    }
    Ok(())
}
