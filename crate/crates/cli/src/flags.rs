//! `train` flags: one long flag per experiment-config key, applied on top of
//! an optional `key=value` config file (flags win).

use std::path::PathBuf;

use clap::Args;
use genret::config::ExperimentConfig;
use genret::error::Error;

macro_rules! train_args {
    ($($field:ident => $key:literal),+ $(,)?) => {
        #[derive(Args)]
        pub struct TrainArgs {
            /// key=value config file; any flag below overrides it.
            #[arg(long)]
            pub config: Option<PathBuf>,
            $(
                #[arg(long = $key, value_name = "VALUE")]
                pub $field: Option<String>,
            )+
        }

        impl TrainArgs {
            fn overrides(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push(($key, v.as_str()));
                    }
                )+
                out
            }
        }
    };
}

train_args! {
    corpus => "corpus",
    pairs => "pairs",
    zs_pairs => "zs_pairs",
    init_checkpoint => "init_checkpoint",
    out_dir => "out_dir",
    val_fraction => "val_fraction",
    vocab_max => "vocab_max",
    scheme => "scheme",
    semantic_k => "semantic_k",
    semantic_c => "semantic_c",
    d_embed => "d_embed",
    kmeans_iters => "kmeans_iters",
    strategy => "strategy",
    representation => "representation",
    direct_l => "direct_l",
    inverted_k => "inverted_k",
    r => "r",
    buffer_size => "buffer_size",
    d_model => "d_model",
    n_layers => "n_layers",
    n_heads => "n_heads",
    d_ff => "d_ff",
    max_enc_len => "max_enc_len",
    max_dec_len => "max_dec_len",
    dropout => "dropout",
    steps => "steps",
    batch_size => "batch_size",
    eval_every => "eval_every",
    lr => "lr",
    warmup => "warmup",
    beam_width => "beam_width",
    constrained => "constrained",
    topk => "topk",
    seed => "seed",
}

impl TrainArgs {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut config = ExperimentConfig::default();
        if let Some(path) = &self.config {
            config.merge_file(path)?;
        }
        for (key, value) in self.overrides() {
            config.set(key, value)?;
        }
        Ok(config)
    }
}
