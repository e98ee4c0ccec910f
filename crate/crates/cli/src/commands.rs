use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use serde::Serialize;
use symdiff_core::constfit::{fit_constants, FitProblem};
use symdiff_core::dataset::{build_dataset, DatasetManifest, DatasetSplit, Split, MANIFEST_FILE, VOCAB_FILE};
use symdiff_core::metrics::{compare_models, evaluate_model, r2_score, EvalConfig, EvalReport, OracleGenerator, REPORT_FILE, SAMPLES_FILE};
use symdiff_core::rng::PortableRng;
use symdiff_core::rpn::render_with_constants;
use symdiff_core::{Program, TokenSequence, Vocabulary};
use symdiff_nn::backbone::{BackboneConfig, Mode, SymbolicModel};
use symdiff_nn::checkpoint::load_checkpoint;
use symdiff_nn::generator::{ModelGenerator, SamplingConfig};
use symdiff_nn::trainer::{train, Objective, BEST_CHECKPOINT, CURVE_FILE};

use crate::args::{Command, CompareArgs, EvalArgs, GenDataArgs, SampleArgs, TrainArgs};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;

pub const EXPRESSIONS_FILE: &str = "expressions.jsonl";
pub const COMPARISON_FILE: &str = "comparison.json";
pub const TABLE_FILE: &str = "comparison.txt";

/// Applies the subcommand's flags over `base` and runs it.
pub fn dispatch(command: Command, mut config: RunConfig, config_file: Option<&Path>) -> Result<()> {
    let mut manifest_inputs: Vec<PathBuf> = config_file.map(Path::to_path_buf).into_iter().collect();
    let name = command.name();
    let (out, outputs) = match &command {
        Command::GenData(a) => {
            a.apply(&mut config);
            (a.out.clone(), gen_data(a, &config)?)
        }
        Command::Train(a) => {
            a.apply(&mut config);
            (a.out.clone(), train_cmd(a, &config, &mut manifest_inputs)?)
        }
        Command::Sample(a) => {
            a.inference.apply(&mut config);
            (a.out.clone(), sample_cmd(a, &config, &mut manifest_inputs)?)
        }
        Command::Eval(a) => {
            a.inference.apply(&mut config);
            (a.out.clone(), eval_cmd(a, &config, &mut manifest_inputs)?)
        }
        Command::Compare(a) => (a.out.clone(), compare_cmd(a, &mut manifest_inputs)?),
    };
    let mut manifest = RunManifest::new(name, &config);
    for p in &manifest_inputs {
        manifest.input(p)?;
    }
    manifest.outputs = outputs;
    let path = manifest.write(&out)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn gen_data(args: &GenDataArgs, config: &RunConfig) -> Result<Vec<String>> {
    let vocab = Vocabulary::standard();
    let manifest = build_dataset(&config.data, &vocab, &args.out)?;
    let c = manifest.counts;
    println!("generated {} train, {} test, {} validate samples in {}", c.train, c.test, c.validate, args.out.display());
    let mut outputs: Vec<String> = Split::all().iter().map(|s| s.file_name().to_string()).collect();
    outputs.extend([VOCAB_FILE.to_string(), MANIFEST_FILE.to_string()]);
    Ok(outputs)
}

/// Vocabulary stored with a dataset.
fn dataset_vocab(dir: &Path) -> Result<Vocabulary> {
    let path = dir.join(VOCAB_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    Vocabulary::from_json(&text).map_err(|e| CliError::io(&path, e))
}

fn open_split(dir: &Path, split: Split, vocab: &Vocabulary, inputs: &mut Vec<PathBuf>) -> Result<DatasetSplit> {
    let s = DatasetSplit::open(dir, split, vocab)?;
    inputs.push(dir.join(split.file_name()));
    Ok(s)
}

fn train_cmd(args: &TrainArgs, config: &RunConfig, inputs: &mut Vec<PathBuf>) -> Result<Vec<String>> {
    config.train.validate()?;
    config.diffusion.validate()?;
    let vocab = dataset_vocab(&args.data)?;
    let data_manifest = DatasetManifest::read(&args.data)?;
    inputs.extend([args.data.join(MANIFEST_FILE), args.data.join(VOCAB_FILE)]);
    let train_split = open_split(&args.data, Split::Train, &vocab, inputs)?;
    let val_split = open_split(&args.data, Split::Validate, &vocab, inputs)?;
    let backbone = BackboneConfig::new(&config.model, data_manifest.config.max_len, vocab.size(), args.mode, config.diffusion.timesteps);
    let model = SymbolicModel::new(backbone, config.seed, DType::F32, &Device::Cpu)?;
    println!("training {} model: {} parameters, {} train / {} validation samples", args.mode.as_str(), model.store().num_parameters(), train_split.len(), val_split.len());
    let objective = Objective::for_model(&model, &config.diffusion)?;
    create_out(&args.out)?;
    let outcome = train(&model, &objective, &train_split, &val_split, &vocab, &config.train, config.seed, &args.out, |r| {
        println!("epoch {:>4}  train {:.6}  val {:.6}  lr {:.3e}", r.epoch, r.train_loss, r.val_loss, r.lr);
    })?;
    println!(
        "best epoch {} (val {:.6}){}",
        outcome.best_epoch,
        outcome.best_val_loss,
        if outcome.stopped_early { ", stopped early" } else { "" }
    );
    Ok(vec![BEST_CHECKPOINT.to_string(), CURVE_FILE.to_string()])
}

fn sampling(config: &RunConfig) -> SamplingConfig {
    SamplingConfig { steps: config.eval.steps, strategy: config.eval.strategy(), seed: config.seed }
}

fn load_generator(path: &Path, config: &RunConfig, inputs: &mut Vec<PathBuf>) -> Result<ModelGenerator> {
    let checkpoint = load_checkpoint(path, &Device::Cpu)?;
    inputs.push(path.to_path_buf());
    let name = match checkpoint.mode() {
        Mode::Diffusion => "diffusion",
        Mode::Autoregressive => "ar",
    };
    Ok(ModelGenerator::new(checkpoint, sampling(config), name)?)
}

fn eval_config(config: &RunConfig) -> EvalConfig {
    EvalConfig { batch_size: config.eval.batch_size, fit: config.fit, seed: config.seed, limit: config.eval.limit }
}

fn eval_cmd(args: &EvalArgs, config: &RunConfig, inputs: &mut Vec<PathBuf>) -> Result<Vec<String>> {
    config.eval.validate()?;
    let split_name = format!("{:?}", args.split).to_lowercase();
    let report = match &args.checkpoint {
        Some(path) => {
            let mut generator = load_generator(path, config, inputs)?;
            let vocab = generator.checkpoint.vocab.clone();
            let split = open_split(&args.data, args.split, &vocab, inputs)?;
            check_max_len(&split, generator.checkpoint.model.config())?;
            evaluate_model(&mut generator, &split, &split_name, &vocab, &eval_config(config))
        }
        None => {
            let vocab = dataset_vocab(&args.data)?;
            let split = open_split(&args.data, args.split, &vocab, inputs)?;
            evaluate_model(&mut OracleGenerator, &split, &split_name, &vocab, &eval_config(config))
        }
    };
    report.write(&args.out)?;
    let a = &report.aggregates;
    println!(
        "{} samples: mean R2 {:.4}, Acc0.1 {:.4}, Acc0.01 {:.4}, Acc0.001 {:.4}, valid RPN {:.4}",
        report.samples.len(),
        a.mean_r2,
        a.mean_acc_01,
        a.mean_acc_001,
        a.mean_acc_0001,
        a.valid_rpn_rate
    );
    Ok(vec![REPORT_FILE.to_string(), SAMPLES_FILE.to_string()])
}

fn check_max_len(split: &DatasetSplit, model: &BackboneConfig) -> Result<()> {
    if split.max_len != model.max_len {
        return Err(CliError::data(format!("dataset sequences have length {} but the model expects {}", split.max_len, model.max_len)));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct Prediction {
    index: usize,
    skeleton: String,
    valid: bool,
    constants: Vec<f64>,
    expression: String,
    sse: Option<f64>,
    r2: Option<f64>,
}

fn read_points_csv(path: &Path) -> Result<Vec<[f64; 3]>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let mut points = Vec::new();
    for (i, row) in reader.deserialize::<(f64, f64, f64)>().enumerate() {
        let (x1, x2, y) = row.map_err(|e| CliError::data(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        if ![x1, x2, y].iter().all(|v| v.is_finite()) {
            return Err(CliError::data(format!("{}: row {}: non-finite value", path.display(), i + 1)));
        }
        points.push([x1, x2, y]);
    }
    if points.is_empty() {
        return Err(CliError::data(format!("{}: no points", path.display())));
    }
    Ok(points)
}

/// Fits constants to a generated skeleton; seeded per cloud like `eval`.
fn predict(index: usize, seq: &TokenSequence, points: &[[f64; 3]], vocab: &Vocabulary, config: &RunConfig) -> Prediction {
    let skeleton = vocab.detokenize(seq);
    let Ok(program) = Program::compile(seq, vocab) else {
        return Prediction { index, skeleton: skeleton.clone(), valid: false, constants: vec![], expression: skeleton, sse: None, r2: None };
    };
    let problem = FitProblem::from_program(program, points, config.fit.bounds);
    let fit = fit_constants(&problem, &config.fit, &mut PortableRng::new(config.seed, index as u64));
    let y: Vec<f64> = points.iter().map(|p| p[2]).collect();
    let r2 = r2_score(&y, &problem.predict(&fit.constants));
    let expression = render_with_constants(seq, vocab, &fit.constants);
    Prediction { index, skeleton, valid: true, constants: fit.constants, expression, sse: Some(fit.sse), r2: Some(r2) }
}

fn sample_cmd(args: &SampleArgs, config: &RunConfig, inputs: &mut Vec<PathBuf>) -> Result<Vec<String>> {
    config.eval.validate()?;
    let generator = load_generator(&args.checkpoint, config, inputs)?;
    let vocab = generator.checkpoint.vocab.clone();
    let clouds: Vec<Vec<[f64; 3]>> = match (&args.input, &args.from_split) {
        (Some(path), _) => {
            let pts = read_points_csv(path)?;
            inputs.push(path.clone());
            vec![pts]
        }
        (None, Some(dir)) => {
            let split = open_split(dir, args.split, &vocab, inputs)?;
            let n = config.eval.limit.map_or(split.len(), |l| l.min(split.len()));
            split.records.into_iter().take(n).map(|r| r.points).collect()
        }
        (None, None) => return Err(CliError::usage("sample needs --input or --from-split")),
    };
    let mut predictions = Vec::with_capacity(clouds.len());
    let ids: Vec<usize> = (0..clouds.len()).collect();
    for (batch_index, chunk) in ids.chunks(config.eval.batch_size).enumerate() {
        let n = clouds[chunk[0]].len();
        if chunk.iter().any(|&i| clouds[i].len() != n) {
            return Err(CliError::data("point clouds in one batch must share a point count"));
        }
        let flat: Vec<f32> = chunk.iter().flat_map(|&i| clouds[i].iter().flat_map(|p| p.map(|v| v as f32))).collect();
        let points = generator.checkpoint.model.points_tensor(&flat, chunk.len(), n)?;
        let generated = generator.generate_ids(&points, batch_index as u64)?;
        for (&i, ids) in chunk.iter().zip(generated) {
            let p = predict(i, &TokenSequence::new(ids), &clouds[i], &vocab, config);
            println!("{}: {}", i, p.expression);
            predictions.push(p);
        }
    }
    create_out(&args.out)?;
    let path = args.out.join(EXPRESSIONS_FILE);
    let mut file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    for p in &predictions {
        writeln!(file, "{}", serde_json::to_string(p).expect("prediction serializes")).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(vec![EXPRESSIONS_FILE.to_string()])
}

fn report_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(REPORT_FILE)
    } else {
        p.to_path_buf()
    }
}

fn compare_cmd(args: &CompareArgs, inputs: &mut Vec<PathBuf>) -> Result<Vec<String>> {
    let (pa, pb) = (report_path(&args.report_a), report_path(&args.report_b));
    let a = EvalReport::read(&pa)?;
    let b = EvalReport::read(&pb)?;
    inputs.extend([pa, pb]);
    let comparison = compare_models(&a, &b)?;
    let table = comparison.to_table();
    print!("{table}");
    create_out(&args.out)?;
    let json_path = args.out.join(COMPARISON_FILE);
    let json = serde_json::to_string_pretty(&comparison).expect("comparison serializes") + "\n";
    fs::write(&json_path, json).map_err(|e| CliError::io(&json_path, e))?;
    let table_path = args.out.join(TABLE_FILE);
    fs::write(&table_path, table).map_err(|e| CliError::io(&table_path, e))?;
    Ok(vec![COMPARISON_FILE.to_string(), TABLE_FILE.to_string()])
}
