//! SetCon against the slotwise loss on the duplicated-slot degeneracy. Copying
//! slot 0 into every slot gives exactly the slotwise loss of a one-slot model,
//! so spreading objects over slots earns nothing; the set loss moves.
//!
//! cargo run --release --example contrastive_losses

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setcon::diffcore::{Graph, Tensor};
use setcon::objectives::{setcon_loss, slotwise_loss, ContrastiveConfig};

fn duplicate_first_slot(t: &Tensor<f64>) -> Tensor<f64> {
    let s = t.shape();
    let (k, d) = (s[s.len() - 2], s[s.len() - 1]);
    let mut out = t.clone();
    for set in out.data_mut().chunks_mut(k * d) {
        let first = set[..d].to_vec();
        for slot in set.chunks_mut(d) {
            slot.copy_from_slice(&first);
        }
    }
    out
}

fn first_slot_only(t: &Tensor<f64>) -> Tensor<f64> {
    let s = t.shape();
    let (k, d) = (s[s.len() - 2], s[s.len() - 1]);
    let mut shape = s.to_vec();
    shape[s.len() - 2] = 1;
    let data: Vec<f64> = t.data().chunks(k * d).flat_map(|set| set[..d].to_vec()).collect();
    Tensor::new(shape, data).expect("consistent shape")
}

fn main() -> setcon::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = ContrastiveConfig::default();
    // s [B, T, K, D] and p [B, T-2, K, D]; the set embedding here is the
    // slot mean so the example needs no trained encoder.
    let s = Tensor::from_fn(&[4, 5, 4, 8], |_| rng.gen_range(-1.0..1.0));
    let p = Tensor::from_fn(&[4, 3, 4, 8], |_| rng.gen_range(-1.0..1.0));
    let losses = |s: &Tensor<f64>, p: &Tensor<f64>| -> setcon::Result<(f64, f64)> {
        let mut g = Graph::new();
        let (sv, pv) = (g.constant(s.clone()), g.constant(p.clone()));
        let slotwise = slotwise_loss(&mut g, sv, pv, &cfg)?;
        let zs = g.sum_axis(sv, 2)?;
        let zp = g.sum_axis(pv, 2)?;
        let setcon = setcon_loss(&mut g, zs, zp, &cfg)?;
        Ok((g.value(slotwise).item(), g.value(setcon).item()))
    };
    let (sw0, sc0) = losses(&s, &p)?;
    let (sw1, sc1) = losses(&duplicate_first_slot(&s), &duplicate_first_slot(&p))?;
    let (sw_single, _) = losses(&first_slot_only(&s), &first_slot_only(&p))?;
    println!("slotwise: distinct {sw0:.9}, duplicated {sw1:.9}, slot 0 alone {sw_single:.9}");
    println!("setcon:   distinct {sc0:.9}, duplicated {sc1:.9}");
    Ok(())
}
