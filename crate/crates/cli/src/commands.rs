use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use rtmd::bench::{run_benchmark, BenchConfig};
use rtmd::config::{ArchConfig, Resolution};
use rtmd::eval::{
    aggregate, compute_metrics, load_depth_png16, save_depth_png16, Crop, DepthMap, EvalOptions,
};
use rtmd::image_io::load_rgb;
use rtmd::loss::{total_loss, CameraIntrinsics, LossOptions, Pose, DEFAULT_SMOOTHNESS_WEIGHT};
use rtmd::network::layer_plan;
use rtmd::{
    bind, count_flops, count_params, disp_to_depth, init_random, load_weights, save_weights,
};
use rtmd::{BindOptions, DepthRange, Network, Tensor};
use serde::Deserialize;
use serde_json::json;

use crate::{
    ArchArgs, ArchInfoArgs, BenchArgs, EvalArgs, InferArgs, InitArgs, LossCheckArgs, WeightsArgs,
};

fn resolve_config(args: &ArchArgs) -> Result<ArchConfig> {
    let cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            ArchConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ArchConfig::preset(args.variant),
    };
    let cfg = match args.resolution {
        Some(res) => cfg.with_resolution(res),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn build_network(cfg: &ArchConfig, args: &WeightsArgs) -> Result<Network> {
    let store = match &args.weights {
        Some(path) => {
            load_weights(path).with_context(|| format!("loading weights {}", path.display()))?
        }
        None => init_random(cfg, args.seed)?,
    };
    let opts = BindOptions {
        allow_extra: args.allow_extra,
    };
    Ok(bind(Network::build(cfg)?, &store, opts)?)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

pub fn init_weights(args: InitArgs) -> Result<()> {
    let cfg = resolve_config(&args.arch)?;
    let store = init_random(&cfg, args.seed)?;
    let store = if args.f16 { store.to_f16() } else { store };
    save_weights(&store, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} tensors ({} parameters) to {}",
        store.len(),
        count_params(&cfg)?,
        args.out.display()
    );
    Ok(())
}

pub fn infer(args: InferArgs) -> Result<()> {
    let cfg = resolve_config(&args.arch)?;
    let range = DepthRange {
        min_depth: args.min_depth,
        max_depth: args.max_depth,
    };
    ensure!(
        range.min_depth > 0.0 && range.min_depth < range.max_depth,
        "depth range must satisfy 0 < min-depth < max-depth"
    );
    let image =
        load_rgb(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let expected = cfg.resolution();
    ensure!(
        image.width == expected.width && image.height == expected.height,
        "input shape mismatch: image is {}x{} but the network expects {expected}",
        image.width,
        image.height
    );
    let net = build_network(&cfg, &args.weights)?.inference_only();
    let disp = net.forward(&image.to_tensor())?.into_d0();
    let depth = disp_to_depth(&disp, range);
    let dims = depth.dims();
    let map = DepthMap::new(dims.h, dims.w, depth.into_vec());
    save_depth_png16(&map, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(raw) = &args.raw {
        let bytes: Vec<u8> = map.values().iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(raw, bytes).with_context(|| format!("writing {}", raw.display()))?;
    }
    Ok(())
}

pub fn bench(args: BenchArgs) -> Result<()> {
    let cfg = resolve_config(&args.arch)?;
    let bench_cfg = BenchConfig {
        warmup: args.warmup,
        iters: args.iters,
        mode: args.mode,
        batch: args.batch,
        seed: args.weights.seed,
    };
    bench_cfg.validate()?;
    let mut net = build_network(&cfg, &args.weights)?;
    if !args.all_heads {
        net = net.inference_only();
    }
    log::info!(
        "benchmarking {} at {}: {} warm-up + {} timed forwards",
        cfg.variant,
        cfg.resolution(),
        args.warmup,
        args.iters
    );
    let report = run_benchmark(&net, &bench_cfg)?;
    if let Some(csv) = &args.csv {
        std::fs::write(csv, report.to_csv())
            .with_context(|| format!("writing {}", csv.display()))?;
    }
    emit(&report.to_json(), args.out.as_deref())
}

fn png_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut files = BTreeMap::new();
    for entry in
        std::fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?
    {
        let path = entry?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                files.insert(name.to_string(), path);
            }
        }
    }
    Ok(files)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let pred = png_files(&args.pred)?;
    let gt = png_files(&args.gt)?;
    let unpaired: Vec<String> = pred
        .keys()
        .filter(|k| !gt.contains_key(*k))
        .map(|k| format!("{} (no ground truth)", args.pred.join(k).display()))
        .chain(
            gt.keys()
                .filter(|k| !pred.contains_key(*k))
                .map(|k| format!("{} (no prediction)", args.gt.join(k).display())),
        )
        .collect();
    ensure!(
        unpaired.is_empty(),
        "unpaired files:\n  {}",
        unpaired.join("\n  ")
    );
    ensure!(
        !gt.is_empty(),
        "no PNG files in {} or {}",
        args.pred.display(),
        args.gt.display()
    );

    let per_image = gt
        .par_iter()
        .map(|(name, gt_path)| {
            let g = load_depth_png16(gt_path)
                .with_context(|| format!("reading {}", gt_path.display()))?;
            let p = load_depth_png16(&pred[name])
                .with_context(|| format!("reading {}", pred[name].display()))?;
            let crop = if args.garg_crop {
                Some(Crop::garg(g.height(), g.width()))
            } else {
                args.crop
            };
            let opts = EvalOptions {
                min_depth: args.min_depth,
                max_depth: args.max_depth,
                crop,
                median_scale: args.median_scale,
            };
            compute_metrics(&p, &g, &opts).with_context(|| format!("evaluating {name}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = aggregate(&per_image)?;
    let text = if args.json {
        serde_json::to_string_pretty(&json!({
            "images": per_image.len(),
            "metrics": mean,
        }))?
    } else {
        format!(
            "images: {}  pixels: {}\n{mean}\n",
            per_image.len(),
            mean.n_pixels
        )
    };
    emit(&text, args.out.as_deref())
}

fn millions(n: u64) -> String {
    format!("{:.3} M", n as f64 / 1e6)
}

pub fn arch_info(args: ArchInfoArgs) -> Result<()> {
    let cfg = resolve_config(&args.arch)?;
    let params = count_params(&cfg)?;
    let macs_all = count_flops(&cfg)?;
    let macs_inference = count_flops(&cfg.clone().with_supervision_scales(1))?;
    let layers = layer_plan(&cfg)?;
    if args.json {
        let table: Vec<_> = layers
            .iter()
            .map(|l| {
                json!({
                    "slot": l.slot,
                    "in_channels": l.in_channels,
                    "out_channels": l.out_channels,
                    "stride": l.stride.get(),
                    "out_height": l.out_height,
                    "out_width": l.out_width,
                    "params": l.params(),
                    "macs": l.macs(),
                })
            })
            .collect();
        let doc = json!({
            "variant": cfg.variant,
            "resolution": cfg.resolution().to_string(),
            "fingerprint": cfg.fingerprint(),
            "params": params,
            "macs_all_heads": macs_all,
            "macs_inference": macs_inference,
            "layers": table,
        });
        return emit(&serde_json::to_string_pretty(&doc)?, None);
    }
    let mut out = String::new();
    writeln!(out, "variant:     {}", cfg.variant)?;
    writeln!(out, "resolution:  {}", cfg.resolution())?;
    writeln!(
        out,
        "levels:      {} {:?} fusion {}",
        cfg.levels, cfg.channels, cfg.fusion
    )?;
    writeln!(out, "parameters:  {params} ({})", millions(params))?;
    writeln!(
        out,
        "MACs:        {macs_inference} inference, {macs_all} with all {} heads",
        cfg.supervision_scales
    )?;
    writeln!(out)?;
    writeln!(
        out,
        "{:<14} {:>5} {:>5} {:>6} {:>9} {:>9} {:>12}",
        "slot", "in", "out", "stride", "output", "params", "MACs"
    )?;
    for l in &layers {
        writeln!(
            out,
            "{:<14} {:>5} {:>5} {:>6} {:>9} {:>9} {:>12}",
            l.slot,
            l.in_channels,
            l.out_channels,
            l.stride.get(),
            format!("{}x{}", l.out_width, l.out_height),
            l.params(),
            l.macs()
        )?;
    }
    emit(&out, None)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BundlePose {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

/// Sample bundle; image paths are relative to the bundle file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Bundle {
    target: PathBuf,
    sources: Vec<PathBuf>,
    poses: Vec<BundlePose>,
    intrinsics: CameraIntrinsics,
    #[serde(default = "default_smoothness")]
    smoothness_weight: f64,
}

fn default_smoothness() -> f64 {
    DEFAULT_SMOOTHNESS_WEIGHT
}

fn load_image(base: &Path, rel: &Path) -> Result<Tensor> {
    let path = base.join(rel);
    Ok(load_rgb(&path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_tensor())
}

pub fn loss_check(args: LossCheckArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.bundle)
        .with_context(|| format!("reading {}", args.bundle.display()))?;
    let bundle: Bundle = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.bundle.display()))?;
    if bundle.smoothness_weight < 0.0 {
        bail!("smoothness_weight must be non-negative");
    }
    let base = args.bundle.parent().unwrap_or(Path::new("."));
    let target = load_image(base, &bundle.target)?;
    let sources = bundle
        .sources
        .iter()
        .map(|p| load_image(base, p))
        .collect::<Result<Vec<_>>>()?;
    let poses = bundle
        .poses
        .iter()
        .map(|p| Pose::from_rows(p.rotation, p.translation))
        .collect::<Result<Vec<_>, _>>()?;

    let mut arch = args.arch.clone();
    if arch.resolution.is_none() {
        let d = target.dims();
        arch.resolution = Some(Resolution::new(d.h, d.w));
    }
    let cfg = resolve_config(&arch)?;
    let net = build_network(&cfg, &args.weights)?;
    let outputs = net.forward(&target)?;
    let opts = LossOptions {
        smoothness_weight: bundle.smoothness_weight,
        ..LossOptions::default()
    };
    let loss = total_loss(
        &outputs,
        &target,
        &sources,
        &poses,
        &bundle.intrinsics,
        &opts,
    )?;
    let text = if args.json {
        serde_json::to_string_pretty(&loss)?
    } else {
        let mut s = format!("total: {:.9}\n", loss.total);
        for t in &loss.scales {
            writeln!(
                s,
                "scale {}: photometric {:.9} smoothness {:.9} total {:.9} kept {:.4}",
                t.scale, t.photometric, t.smoothness, t.total, t.kept_fraction
            )?;
        }
        s
    };
    emit(&text, None)
}

pub fn dump_config(args: ArchArgs) -> Result<()> {
    emit(&resolve_config(&args)?.to_toml(), None)
}
