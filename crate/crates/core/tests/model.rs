use genrec::model::{load_checkpoint, save_checkpoint, Model, ModelConfig, PromptCell, PromptSequence, Special};
use genrec::tokenizer::SemanticId;
use rand::Rng;

fn config(levels: Vec<usize>, merger: bool) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        hidden_dim: 8,
        ffn_dim: 16,
        level_sizes: levels,
        max_prompt_positions: 24,
        max_response_positions: 6,
        merger_enabled: merger,
        level_masking: true,
        seed: 5,
    }
}

fn perturbed(cfg: ModelConfig, scale: f64) -> Model<f64> {
    let mut m = Model::<f64>::init(cfg).unwrap();
    let mut rng = genrec::rng::stream(9, &["model-test"]);
    for p in m.params.iter_mut() {
        *p += rng.random_range(-scale..scale);
    }
    m
}

/// Straightforward triple-loop transformer used as an independent oracle.
fn reference_logits(m: &Model<f64>, prompt: &PromptSequence, fed: &[u32]) -> Vec<Vec<f64>> {
    let c = m.config();
    let h = c.hidden_dim;
    let v = m.vocab();
    let t = |name: &str| m.tensor(name).unwrap().to_vec();
    let emb = t("tok_emb");
    let row = |tok: u32| emb[tok as usize * h..(tok as usize + 1) * h].to_vec();
    let matvec = |x: &[f64], w: &[f64], b: &[f64], out: usize| -> Vec<f64> {
        (0..out).map(|j| b[j] + (0..x.len()).map(|k| x[k] * w[k * out + j]).sum::<f64>()).collect()
    };
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let pos_p = t("pos.prompt");
    let pos_r = t("pos.response");
    let mut prompt_vecs = Vec::new();
    for cell in &prompt.cells {
        match cell {
            PromptCell::Special(s) => prompt_vecs.push(row(v.special(*s))),
            PromptCell::Item(sid) => {
                let toks = v.sid_tokens(sid);
                if c.merger_enabled {
                    let z: Vec<f64> = toks.iter().flat_map(|&tk| row(tk)).collect();
                    prompt_vecs.push(matvec(&z, &t("merger.weight"), &t("merger.bias"), h));
                } else {
                    prompt_vecs.extend(toks.iter().map(|&tk| row(tk)));
                }
            }
        }
    }
    let n_p = prompt_vecs.len();
    for (i, e) in prompt_vecs.into_iter().enumerate() {
        xs.push((0..h).map(|j| e[j] + pos_p[i * h + j]).collect());
    }
    for (i, &tok) in fed.iter().enumerate() {
        let e = row(tok);
        xs.push((0..h).map(|j| e[j] + pos_r[i * h + j]).collect());
    }
    let rms = |x: &[f64], g: &[f64]| -> Vec<f64> {
        let ms = x.iter().map(|a| a * a).sum::<f64>() / x.len() as f64;
        let r = 1.0 / (ms + 1e-6).sqrt();
        x.iter().zip(g).map(|(a, b)| a * r * b).collect()
    };
    let gelu = |u: f64| 0.5 * u * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (u + 0.044715 * u.powi(3))).tanh());
    let n = xs.len();
    let dh = h / c.n_heads;
    for l in 0..c.n_layers {
        let p = |s: &str| t(&format!("layers.{l}.{s}"));
        let a: Vec<Vec<f64>> = xs.iter().map(|x| rms(x, &p("norm1.gain"))).collect();
        let q: Vec<Vec<f64>> = a.iter().map(|x| matvec(x, &p("attn.wq"), &p("attn.bq"), h)).collect();
        let k: Vec<Vec<f64>> = a.iter().map(|x| matvec(x, &p("attn.wk"), &p("attn.bk"), h)).collect();
        let vv: Vec<Vec<f64>> = a.iter().map(|x| matvec(x, &p("attn.wv"), &p("attn.bv"), h)).collect();
        let mut ctx = vec![vec![0.0; h]; n];
        for hd in 0..c.n_heads {
            for i in 0..n {
                let s: Vec<f64> = (0..=i)
                    .map(|j| (0..dh).map(|d| q[i][hd * dh + d] * k[j][hd * dh + d]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter().map(|x| (x - mx).exp()).sum();
                for j in 0..=i {
                    let w = (s[j] - mx).exp() / z;
                    for d in 0..dh {
                        ctx[i][hd * dh + d] += w * vv[j][hd * dh + d];
                    }
                }
            }
        }
        for i in 0..n {
            let o = matvec(&ctx[i], &p("attn.wo"), &p("attn.bo"), h);
            for j in 0..h {
                xs[i][j] += o[j];
            }
            let b = rms(&xs[i], &p("norm2.gain"));
            let u: Vec<f64> = matvec(&b, &p("ffn.w1"), &p("ffn.b1"), c.ffn_dim).into_iter().map(gelu).collect();
            let f = matvec(&u, &p("ffn.w2"), &p("ffn.b2"), h);
            for j in 0..h {
                xs[i][j] += f[j];
            }
        }
    }
    (n_p - 1..n)
        .map(|i| matvec(&rms(&xs[i], &t("norm_f.gain")), &t("out.weight"), &t("out.bias"), v.size()))
        .collect()
}

fn history() -> Vec<SemanticId> {
    vec![SemanticId::new([1, 0, 2]), SemanticId::new([3, 3, 1]), SemanticId::new([0, 2, 2])]
}

#[test]
fn forward_matches_reference_implementation() {
    for merger in [true, false] {
        let m = perturbed(config(vec![4, 4, 4], merger), 0.3);
        let prompt = m.prompt(&history());
        let fed = m.vocab().response_tokens(&[SemanticId::new([2, 1, 3])]);
        let got = m.forward(&prompt, &fed[..2]).unwrap();
        let want = reference_logits(&m, &prompt, &fed[..2]);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            for (a, b) in g.iter().zip(w) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn all_triples_sum_to_one() {
    let m = perturbed(config(vec![4, 4, 4], true), 0.3);
    let prompt = m.prompt(&history());
    let mut total = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                let y = m.vocab().sid_tokens(&SemanticId::new([a, b, c]));
                total += m.log_prob(&prompt, &y).unwrap().exp();
            }
        }
    }
    assert!((total - 1.0).abs() < 1e-9, "{total}");
}

#[test]
fn zero_output_head_is_uniform_per_level() {
    let mut m = perturbed(config(vec![64, 64, 64], true), 0.3);
    m.tensor_mut("out.weight").unwrap().fill(0.0);
    m.tensor_mut("out.bias").unwrap().fill(0.0);
    let prompt = m.prompt(&history());
    let y = m.vocab().sid_tokens(&SemanticId::new([7, 40, 63]));
    let lp = m.log_prob(&prompt, &y).unwrap();
    assert!((lp + 3.0 * 64f64.ln()).abs() < 1e-12);
}

#[test]
fn merger_shortens_item_prompts_by_level_count() {
    let long: Vec<SemanticId> = (0..5).map(|i| SemanticId::new([i % 4, 1, 2])).collect();
    let on = perturbed(config(vec![4, 4, 4], true), 0.1);
    let off = perturbed(config(vec![4, 4, 4], false), 0.1);
    let p = on.prompt(&long);
    let n_on = on.embed_prompt(&p).unwrap().len();
    let n_off = off.embed_prompt(&p).unwrap().len();
    assert_eq!(n_on, 5 + 2);
    assert_eq!(n_off, 5 * 3 + 2);
    assert_eq!(n_off - 2, 3 * (n_on - 2));
}

#[test]
fn zero_merger_maps_items_to_zero_vectors() {
    let mut m = perturbed(config(vec![4, 4, 4], true), 0.3);
    m.tensor_mut("merger.weight").unwrap().fill(0.0);
    m.tensor_mut("merger.bias").unwrap().fill(0.0);
    let p = m.prompt(&history());
    let vecs = m.embed_prompt(&p).unwrap();
    assert!(vecs[1..4].iter().all(|v| v.iter().all(|&x| x == 0.0)));
    let bos = m.vocab().special(Special::Bos) as usize;
    assert_eq!(vecs[0], m.tensor("tok_emb").unwrap()[bos * 8..bos * 8 + 8].to_vec());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut m = perturbed(config(vec![4, 4, 4], true), 0.3).cast::<f32>();
    m.step = 42;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.grck");
    let meta = serde_json::json!({"arm": "test"});
    save_checkpoint(&path, &m, &meta).unwrap();
    let (back, info) = load_checkpoint(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(info.step, 42);
    assert_eq!(info.meta, meta);
    let prompt = m.prompt(&history());
    let fed = m.vocab().response_tokens(&[SemanticId::new([2, 1, 3])]);
    assert_eq!(m.forward(&prompt, &fed).unwrap(), back.forward(&prompt, &fed).unwrap());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let m = Model::<f32>::init(config(vec![4, 4, 4], true)).unwrap();
    let mut buf = Vec::new();
    genrec::model::write_checkpoint(&mut buf, &m, &serde_json::Value::Null).unwrap();
    assert!(genrec::model::read_checkpoint(&buf[..buf.len() - 1]).is_err());
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(genrec::model::read_checkpoint(&bad[..]).is_err());
}

#[test]
fn initialization_is_seeded() {
    let a = Model::<f32>::init(config(vec![4, 4, 4], true)).unwrap();
    let b = Model::<f32>::init(config(vec![4, 4, 4], true)).unwrap();
    assert_eq!(a.params, b.params);
    assert!(a.tensor("layers.0.norm1.gain").unwrap().iter().all(|&g| g == 1.0));
    assert!(a.tensor("out.bias").unwrap().iter().all(|&g| g == 0.0));
}
