//! Restores a held-out hazy image with and without unlabeled context images
//! from the same domain, using a checkpoint from `train_desk` or `hazemeta
//! train`.
//!
//! ```text
//! cargo run --release --example dehaze_with_context -- <checkpoint> [out_dir]
//! ```

use std::path::PathBuf;

use hazemeta::evaluate::{dark_channel_mean, eval_cases, psnr};
use hazemeta::trainer::Dehazer;

fn main() -> hazemeta::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(ckpt) = args.next() else {
        eprintln!("usage: dehaze_with_context <checkpoint> [out_dir]");
        std::process::exit(2);
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/dehaze".into()));
    std::fs::create_dir_all(&out).map_err(|e| hazemeta::Error::InvalidInput(e.to_string()))?;

    let dehazer = Dehazer::from_checkpoint(ckpt.as_ref())?;
    let domain = dehazer.cfg.data.held_out_domains[0].clone();
    let mut eval = dehazer.cfg.eval.clone();
    eval.n_images = 1;
    eval.context_size = 5;
    let case = eval_cases(&domain, &dehazer.cfg.data.scene, &eval)?.remove(0);

    case.hazy.save_png(&out.join("hazy.png"))?;
    case.clear.save_png(&out.join("clear.png"))?;
    println!(
        "hazy input: {:.2} dB, dark channel {:.3}",
        psnr(&case.hazy, &case.clear)?,
        dark_channel_mean(&case.hazy, 15)?
    );
    for k in [0, 1, 3, 5] {
        let restored = dehazer.dehaze(&case.hazy, &case.context[..k])?;
        restored.save_png(&out.join(format!("restored_ctx{k}.png")))?;
        println!(
            "{k} context image(s): {:.2} dB, dark channel {:.3}",
            psnr(&restored, &case.clear)?,
            dark_channel_mean(&restored, 15)?
        );
    }
    Ok(())
}
