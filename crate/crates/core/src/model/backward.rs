use ndarray::{s, Array2, Axis};

use super::forward::{MpTape, StageTape};
use super::{ForwardConfig, ModelState, MpParams, Scene, Tape};
use crate::encodings::{adapt_backward, process_embedding_backward};
use crate::nn::{linear_backward, relu_grad_from_output};
use crate::{Error, Real, Result};

/// Gradients of every parameter given upstream gradients of the forecast
/// (`N × H·d_x`) and the reconstruction (`N × W·d_x`).
pub fn backward<F: Real>(
    state: &ModelState<F>,
    cfg: &ForwardConfig,
    scene: &Scene<F>,
    tape: &Tape<F>,
    dpred: &Array2<F>,
    drecon: &Array2<F>,
) -> Result<ModelState<F>> {
    let n = scene.n_nodes();
    if dpred.dim() != (n, cfg.horizon * cfg.d_x) || drecon.dim() != (n, cfg.window * cfg.d_x) {
        return Err(Error::Shape("upstream gradient shapes do not match the forward output".into()));
    }
    let mut g = state.zeros_like();
    let (dh_n, dn) = (cfg.hidden, cfg.node_dim);

    // heads
    let mut dh = linear_backward(
        tape.final_hidden.view(),
        state.recon_w.view(),
        drecon.view(),
        &mut g.recon_w,
        Some(&mut g.recon_b),
    );
    let drh = linear_backward(
        tape.readout_hidden.view(),
        state.read_w2.view(),
        dpred.view(),
        &mut g.read_w2,
        Some(&mut g.read_b2),
    );
    let dpre = drh * &tape.readout_hidden.mapv(relu_grad_from_output);
    let dri = linear_backward(
        tape.readout_input.view(),
        state.read_w1.view(),
        dpre.view(),
        &mut g.read_w1,
        Some(&mut g.read_b1),
    );
    dh += &dri.slice(s![.., 0..dh_n]);
    let off = dh_n + cfg.horizon * cfg.d_u;
    let mut dv = dri.slice(s![.., off..off + dn]).to_owned();
    let mut dvt = Array2::<F>::zeros((n, dn));

    for stage in tape.stages.iter().rev() {
        dh = match stage {
            StageTape::Ffn { block, input, act } => {
                let p = &state.ffn[*block];
                let gp = &mut g.ffn[*block];
                let dpre = &dh * &act.mapv(relu_grad_from_output);
                dh + linear_backward(input.view(), p.w.view(), dpre.view(), &mut gp.w, Some(&mut gp.b))
            }
            StageTape::Mp(t) => {
                let layer = t.layer;
                mp_backward(&state.mp[layer], &mut g.mp[layer], cfg, scene, t, &tape.embedding, &tape.processed, dh, &mut dv, &mut dvt)
            }
        };
    }

    let dpre = dh * &tape.temporal_out.mapv(relu_grad_from_output);
    let dti = linear_backward(
        tape.temporal_input.view(),
        state.temp_w.view(),
        dpre.view(),
        &mut g.temp_w,
        Some(&mut g.temp_b),
    );
    let off = cfg.window * cfg.d_x;
    dvt += &dti.slice(s![.., off..off + dn]);

    if let Some(enc) = &tape.encoding {
        dv += &process_embedding_backward(&enc.norm, &state.norm_gamma, &dvt, &mut g.norm_gamma, &mut g.norm_shift);
        g.probe += &scene.encodings.t().dot(&dv);
    }

    g.check_finite("gradient")?;
    Ok(g)
}

#[allow(clippy::too_many_arguments)]
fn mp_backward<F: Real>(
    p: &MpParams<F>,
    gp: &mut MpParams<F>,
    cfg: &ForwardConfig,
    scene: &Scene<F>,
    t: &MpTape<F>,
    v: &Array2<F>,
    vt: &Array2<F>,
    dout: Array2<F>,
    dv: &mut Array2<F>,
    dvt: &mut Array2<F>,
) -> Array2<F> {
    let (dh, dn) = (cfg.hidden, cfg.node_dim);
    let h = &t.input;
    let n = h.nrows();

    let dnode = match &t.diffusion {
        None => dout,
        Some(d) => {
            let dpre = dout * &d.out.mapv(relu_grad_from_output);
            gp.diff_self += &d.input.t().dot(&dpre);
            let mut dx = dpre.dot(&p.diff_self.t());
            for (k, pk) in d.powers.iter().enumerate() {
                gp.diff_hops[k] += &pk.t().dot(&dpre);
            }
            // Σ_k (Tᵀ)^k G_k by Horner's rule
            let tt = scene.graph.transition.t();
            let mut acc: Option<Array2<F>> = None;
            for k in (0..d.powers.len()).rev() {
                let gk = dpre.dot(&p.diff_hops[k].t());
                let inner = match acc {
                    Some(a) => gk + a,
                    None => gk,
                };
                acc = Some(tt.dot(&inner));
            }
            if let Some(a) = acc {
                dx += &a;
            }
            dx
        }
    };

    let dz = dnode * &t.node_out.mapv(relu_grad_from_output);
    gp.node_w += &dz.t().dot(h);
    let mut dh_in = dz.dot(&p.node_w);

    let w = &p.msg_w;
    let gate_w = p.gate_w.row(0);
    let col_a = 2 * dh + dn;
    let col_e = col_a + 1;
    let mut drecv = Array2::<F>::zeros((n, dh));
    let mut dsend = Array2::<F>::zeros((n, dh));
    let mut de = t.functional.as_ref().map(|_| Array2::<F>::zeros((n, n)));
    let support = t.functional.as_ref().and_then(|f| f.support.as_ref());
    let mut dpre_m = vec![F::zero(); dh];
    let edges = &t.edges;
    for (i, range) in edges.receivers() {
        if range.is_empty() {
            continue;
        }
        let inv_deg = F::one() / F::of(range.len() as f64);
        let dagg = dz.row(i);
        for k in range {
            let j = edges.sender[k];
            let m = t.messages.row(k);
            let alpha = t.gates[k];
            let dalpha = inv_deg * dagg.dot(&m);
            let dgate = dalpha * alpha * (F::one() - alpha);
            {
                let mut gw = gp.gate_w.row_mut(0);
                for c in 0..dh {
                    gw[c] = gw[c] + dgate * m[c];
                }
            }
            gp.gate_b[0] = gp.gate_b[0] + dgate;
            let scale = alpha * inv_deg;
            let (a, e) = (edges.adjacency_weight[k], edges.functional_weight[k]);
            let mut de_k = F::zero();
            for c in 0..dh {
                let dm = scale * dagg[c] + dgate * gate_w[c];
                let d = dm * relu_grad_from_output(m[c]);
                dpre_m[c] = d;
                drecv[[i, c]] = drecv[[i, c]] + d;
                dsend[[j, c]] = dsend[[j, c]] + d;
                gp.msg_w[[c, col_a]] = gp.msg_w[[c, col_a]] + d * a;
                gp.msg_w[[c, col_e]] = gp.msg_w[[c, col_e]] + d * e;
                de_k = de_k + d * w[[c, col_e]];
            }
            if let Some(de) = de.as_mut() {
                if support.is_none_or(|s| s[[i, j]]) {
                    de[[i, j]] = de[[i, j]] + de_k;
                }
            }
        }
    }

    let w_recv = w.slice(s![.., 0..dh]);
    let w_emb = w.slice(s![.., dh..dh + dn]);
    let w_send = w.slice(s![.., dh + dn..2 * dh + dn]);
    {
        let mut gw = gp.msg_w.slice_mut(s![.., 0..dh]);
        gw += &drecv.t().dot(h);
    }
    {
        let mut gw = gp.msg_w.slice_mut(s![.., dh..dh + dn]);
        gw += &drecv.t().dot(vt);
    }
    {
        let mut gw = gp.msg_w.slice_mut(s![.., dh + dn..2 * dh + dn]);
        gw += &dsend.t().dot(h);
    }
    gp.msg_b += &drecv.sum_axis(Axis(0));
    dh_in += &drecv.dot(&w_recv);
    dh_in += &dsend.dot(&w_send);
    *dvt += &drecv.dot(&w_emb);

    if let (Some(f), Some(de)) = (&t.functional, de) {
        let dg = (&de + &de.t()).dot(&f.act);
        *dv += &adapt_backward(v, &p.adapter, &f.pre, &dg, &mut gp.adapter);
    }

    // residual-free layer: the input reaches the output only through the paths above
    dh_in
}
