//! Policy training with the cross-entropy method.

use std::fs::File;
use std::io::BufWriter;

use anyhow::{Context, Result};
use clap::Args;

use ringhil_core::advisory::{train_cem, CemParams, PolicyFile, PolicyRegistry};

use crate::Common;

#[derive(Args, Clone)]
pub struct TrainArgs {
    /// Policy kind to train when the scenario names none.
    #[arg(long, default_value = "linear")]
    policy: String,
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    #[arg(long, default_value_t = 24)]
    population: usize,
    #[arg(long, default_value_t = 0.25)]
    elite_frac: f64,
    #[arg(long, default_value_t = 0.05)]
    init_std: f64,
    #[arg(long, default_value_t = 0.0)]
    extra_std: f64,
    /// Sampling seed for the trainer.
    #[arg(long, default_value_t = 0)]
    trainer_seed: u64,
    /// Reward lost per collision-guard intervention per post-warmup tick.
    #[arg(long, default_value_t = 10.0)]
    collision_penalty: f64,
}

pub fn cmd_train(common: &Common, args: &TrainArgs) -> Result<()> {
    let scenario = common.scenario()?;
    let registry = PolicyRegistry::builtin();
    let ctx = scenario.policy_context();
    let kind = match scenario.policy_kind()? {
        Some(kind) => kind,
        None => registry.template(&args.policy, &ctx)?,
    };
    let template = registry.build(&kind, &ctx)?;
    let mut env = scenario.training_env();
    env.collision_penalty = args.collision_penalty;
    let params = CemParams {
        iterations: args.iterations,
        population: args.population,
        elite_frac: args.elite_frac,
        init_std: args.init_std,
        extra_std: args.extra_std,
        seed: args.trainer_seed,
    };
    let result = common.pool()?.install(|| train_cem(&env, template.as_ref(), &params))?;

    let mut file = PolicyFile::from_kind(&result.policy);
    file.mode = Some(scenario.advice.mode);
    file.trained_at = Some(chrono::Utc::now().to_rfc3339());
    file.seed = Some(args.trainer_seed);
    file.save(&common.out).with_context(|| format!("writing {}", common.out.display()))?;

    let curve = common.out.with_extension("rewards.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&curve)?));
    for stat in &result.stats {
        w.serialize(stat)?;
    }
    w.flush()?;
    match result.best_reward {
        Some(r) => println!("best reward {r:.6} m/s; policy {}, curve {}", common.out.display(), curve.display()),
        None => println!("no iterations run; wrote the initial policy to {}", common.out.display()),
    }
    Ok(())
}
