//! `botsense`: offline robot detection for web access logs, as a pipeline of
//! composable subcommands with file-based handoff. Run `botsense pipeline`
//! for the whole chain, or the individual stages for auditability.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;

#[derive(Parser)]
#[command(
    name = "botsense",
    version,
    about = "Detect web robots in access logs from session features and topic models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw access log into a normalized entries file.
    Ingest(IngestArgs),
    /// Group normalized entries into per-user sessions.
    Sessionize(SessionizeArgs),
    /// Train the topic model on an article corpus.
    LdaTrain(LdaTrainArgs),
    /// Export truncated per-document topic vectors from a trained model.
    TopicsExport(TopicsExportArgs),
    /// Compute per-session feature rows from sessions and topic vectors.
    Features(FeaturesArgs),
    /// Label sessions and fill the label columns of a feature table.
    Label(LabelArgs),
    /// Split a labeled feature table into train and test sets by time.
    Split(SplitArgs),
    /// Train a classifier on a labeled feature table.
    Train(TrainArgs),
    /// Evaluate a trained model on a labeled feature table.
    Evaluate(EvaluateArgs),
    /// Rank features by F-test or chi-square score.
    ScoreFeatures(ScoreFeaturesArgs),
    /// Balanced accuracy over growing time-ordered training prefixes.
    LearningCurve(LearningCurveArgs),
    /// Generate a synthetic corpus, access log, and ground truth.
    Synth(SynthArgs),
    /// Run every stage in order inside one output directory.
    Pipeline(PipelineArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, result) = match cli.command {
        Command::Ingest(args) => ("ingest", run_ingest(args)),
        Command::Sessionize(args) => ("sessionize", run_sessionize(args)),
        Command::LdaTrain(args) => ("lda-train", run_lda_train(args)),
        Command::TopicsExport(args) => ("topics-export", run_topics_export(args)),
        Command::Features(args) => ("features", run_features(args)),
        Command::Label(args) => ("label", run_label(args)),
        Command::Split(args) => ("split", run_split(args)),
        Command::Train(args) => ("train", run_train(args)),
        Command::Evaluate(args) => ("evaluate", run_evaluate(args)),
        Command::ScoreFeatures(args) => ("score-features", run_score_features(args)),
        Command::LearningCurve(args) => ("learning-curve", run_learning_curve(args)),
        Command::Synth(args) => ("synth", run_synth(args)),
        Command::Pipeline(args) => ("pipeline", run_pipeline(args)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {stage}: {err:#}");
            ExitCode::FAILURE
        }
    }
}
