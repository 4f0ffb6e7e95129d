//! The whole pipeline in one run: generate data, pre-train and fine-tune the
//! teacher, score the distillation split, distill the student, then compare
//! both models on ranking quality and latency.
//!
//! Run with: cargo run --example full_pipeline
//!
//! The same stages are available as `disrank` subcommands driven by a TOML
//! file; this example drives them as library calls.

use disrank::pipeline::{
    cmd_bench, cmd_cpt, cmd_distill, cmd_eval, cmd_gen_data, cmd_score, cmd_score_dist, cmd_sft,
    EvalTarget, RunConfig,
};

fn main() {
    let mut config = RunConfig::default();
    config.seed = 3;
    config.max_seq_len = 64;
    config.paths.out_dir = Some("target/examples/full_pipeline".into());
    config.synth.vocab_words = 120;
    config.synth.cpt_queries = 150;
    config.synth.sft_queries = 250;
    config.synth.kd_queries = 250;
    config.synth.test_queries = 80;
    config.synth.docs_per_query = 6;
    config.synth.query_words = (2, 3);
    config.synth.title_words = (2, 4);
    config.synth.summary_words = (3, 6);
    config.teacher.d_model = 48;
    config.teacher.n_layers = 3;
    config.teacher.n_heads = 4;
    config.teacher.d_ff = 192;
    config.student.d_model = 24;
    config.student.n_layers = 2;
    config.student.n_heads = 2;
    config.student.d_ff = 96;
    config.train.cpt_epochs = 2;
    config.train.sft_epochs = 2;
    config.train.distill_epochs = 2;
    config.train.pairs_per_query = 3;
    config.bench.batch = 8;
    config.bench.seq_len = 64;

    println!("== generate ==");
    let gen = cmd_gen_data(&config).unwrap();
    println!("{} cpt / {} sft / {} kd / {} test records\n", gen.cpt, gen.sft, gen.kd, gen.test);

    println!("== pre-train teacher ==");
    cmd_cpt(&config).unwrap();

    println!("\n== fine-tune teacher ==");
    cmd_sft(&config).unwrap();

    println!("\n== teacher scores the kd split ==");
    cmd_score(&config).unwrap();

    println!("\n== distill into student ==");
    let distill = cmd_distill(&config).unwrap();
    println!(
        "teacher-student gap: {:.4} before, {:.4} after",
        distill.initial_gap,
        distill.epoch_gap.last().unwrap()
    );

    println!("\n== evaluate both on the test split ==");
    config.eval.target = EvalTarget::Teacher;
    let teacher = cmd_eval(&config).unwrap();
    config.eval.target = EvalTarget::Student;
    let student = cmd_eval(&config).unwrap();
    println!(
        "\nteacher pnr {:?} ndcg@5 {:.3} | student pnr {:?} ndcg@5 {:.3}",
        teacher.pnr_mean_finite, teacher.ndcg_at_5, student.pnr_mean_finite, student.ndcg_at_5
    );

    println!("\n== latency ==");
    let bench = cmd_bench(&config).unwrap();
    println!(
        "speedup from distillation: {:.1}x with {:.1}x fewer parameters",
        bench.teacher.mean_ms_per_batch / bench.student.mean_ms_per_batch,
        bench.teacher.param_count as f64 / bench.student.param_count as f64
    );

    println!("\n== score distribution ==");
    let dist = cmd_score_dist(&config).unwrap();
    println!("histogram written to {}", dist.path.display());
}
