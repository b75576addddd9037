use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};
use stainkit::eval::{load_feature_library, AccuracyReport};
use stainkit::image::{encode_png, load_image};
use stainkit::loss::{self, LossComponents, LossWeights};
use stainkit::stain::{ChannelSelector, Stain, StainBasis, StainProjector};
use stainkit::{parallelism_enabled, MetricReport, RgbImage};

use crate::output::{emit_json, print_json, write_atomic, CliError, CliResult};
use crate::{Cli, Command, EvalArgs, LossArgs, MetricsArgs, SeparateArgs};

pub fn run(cli: &Cli) -> CliResult {
    if !(cli.eps > 0.0 && cli.eps <= 0.01) {
        return Err(CliError::Usage(format!("--eps {} must lie in (0, 0.01]", cli.eps)));
    }
    match &cli.command {
        Command::Separate(args) => separate(cli, args),
        Command::Metrics(args) => metrics(cli, args),
        Command::Loss(args) => loss_breakdown(cli, args),
        Command::Eval(args) => eval(cli, args),
    }
}

fn basis(cli: &Cli) -> CliResult<StainBasis> {
    match &cli.basis {
        Some(path) => Ok(StainBasis::from_json_file(path)?),
        None => Ok(StainBasis::default()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    if !path.exists() {
        return Err(CliError::Io(format!("file not found: {}", path.display())));
    }
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn separate(cli: &Cli, args: &SeparateArgs) -> CliResult {
    let selector: ChannelSelector = args.channel.parse()?;
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("separate needs --out".into()))?;
    let projector = StainProjector::new(&basis(cli)?, selector, cli.eps)?;

    let jobs: Vec<(PathBuf, PathBuf)> = if args.input.is_dir() {
        std::fs::create_dir_all(out)?;
        let mut pngs: Vec<PathBuf> = std::fs::read_dir(&args.input)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        pngs.sort();
        pngs.into_iter()
            .map(|p| {
                let target = out.join(p.file_name().expect("read_dir entries have names"));
                (p, target)
            })
            .collect()
    } else {
        vec![(args.input.clone(), out.to_path_buf())]
    };

    let process = |(input, output): &(PathBuf, PathBuf)| -> CliResult<Value> {
        let img = load_image(input)?;
        let separated = projector.apply(&img);
        write_atomic(output, &encode_png(&separated)?)?;
        Ok(json!({
            "input": input.display().to_string(),
            "output": output.display().to_string(),
            "height": img.height(),
            "width": img.width(),
        }))
    };
    let files: Vec<Value> = if parallelism_enabled() {
        jobs.par_iter().map(process).collect::<CliResult<_>>()?
    } else {
        jobs.iter().map(process).collect::<CliResult<_>>()?
    };

    if cli.json {
        print_json(&json!({ "channel": selector.to_string(), "files": files }))?;
    }
    Ok(())
}

fn metrics(cli: &Cli, args: &MetricsArgs) -> CliResult {
    let a = load_image(&args.a)?;
    let b = load_image(&args.b)?;
    let report = MetricReport::compute(&a, &b, &args.ssim.params())?;
    emit_json(&serde_json::to_value(report).expect("report serializes"), cli.out.as_deref())
}

/// Reads a headerless CSV holding exactly two numeric rows of equal length.
fn read_vector_pair(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    if !path.exists() {
        return Err(CliError::Io(format!("file not found: {}", path.display())));
    }
    let bad = |m: String| CliError::Usage(format!("{}: {m}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(e.to_string()))?;
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let v = row
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad(format!("`{f}` is not a number"))))
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(v);
    }
    if rows.len() != 2 {
        return Err(bad(format!("expected 2 rows, found {}", rows.len())));
    }
    let b = rows.pop().expect("two rows");
    let a = rows.pop().expect("two rows");
    Ok((a, b))
}

pub fn image_components(generated: &RgbImage, target: &RgbImage, basis: &StainBasis, eps: f64, ssim: &stainkit::SsimParams) -> CliResult<LossComponents> {
    let dab = StainProjector::new(basis, ChannelSelector::only(Stain::Dab), eps)?;
    let dab_loss = loss::l1_loss(dab.apply(generated).data(), dab.apply(target).data())?.value;
    Ok(LossComponents {
        dab: Some(dab_loss),
        ssim: Some(loss::ssim_loss(generated, target, ssim)?),
        mae: Some(stainkit::metrics::mae(generated, target)?),
        ..Default::default()
    })
}

fn loss_breakdown(cli: &Cli, args: &LossArgs) -> CliResult {
    let weights = match &args.weights {
        Some(path) => read_json::<LossWeights>(path)?,
        None => LossWeights::default(),
    };
    weights.validate()?;

    let mut components = LossComponents::default();
    if let (Some(g), Some(t)) = (&args.generated, &args.target) {
        let generated = load_image(g)?;
        let target = load_image(t)?;
        generated.same_dims(&target)?;
        components = image_components(&generated, &target, &basis(cli)?, cli.eps, &args.ssim.params())?;
    }
    if let Some(path) = &args.h_pair {
        let (a, b) = read_vector_pair(path)?;
        components.h = Some(loss::cosine_similarity_loss(&a, &b)?.value);
    }
    if let Some(path) = &args.cmp_pair {
        let (a, b) = read_vector_pair(path)?;
        components.cmp = Some(loss::cosine_similarity_loss(&a, &b)?.value);
    }
    if let (Some(probs), Some(level)) = (&args.probs, args.level) {
        components.level = Some(loss::focal_loss(probs, level, args.alpha, args.gamma)?.value);
    }
    if let (Some(full), Some(half)) = (args.gan_512, args.gan_256) {
        if !(full.is_finite() && half.is_finite()) {
            return Err(CliError::Usage("GAN losses must be finite".into()));
        }
        components.gan = Some(loss::multiscale_gan_loss(full, half));
    }
    if let Some(path) = &args.components {
        let given: LossComponents = read_json(path)?;
        components = components.overlay(&given);
    }
    let all = [
        components.h,
        components.dab,
        components.ssim,
        components.mae,
        components.cmp,
        components.level,
        components.gan,
    ];
    if all.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Usage("loss terms must be finite".into()));
    }

    let breakdown = components.combine(&weights);
    emit_json(&serde_json::to_value(breakdown).expect("breakdown serializes"), cli.out.as_deref())
}

fn eval(cli: &Cli, args: &EvalArgs) -> CliResult {
    let library = load_feature_library(&args.library)?;
    let queries = load_feature_library(&args.queries)?.into_records();
    let report = AccuracyReport::compute(&library, &queries, &args.topk, args.knn)?;
    emit_json(&serde_json::to_value(report).expect("report serializes"), cli.out.as_deref())
}
