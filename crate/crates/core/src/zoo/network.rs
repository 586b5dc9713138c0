use super::cost::layer_names;
use super::{LayerSpec, ModelSpec, NormKind};
use crate::autodiff::{Eager, Ops};
use crate::error::{config_err, shape_err, Error, Result};
use crate::norm::{
    bn_forward, dn_forward, se_bn_forward, DnWeights, Mode, RunningStats, ScConfig, ScGeometry, SeParams,
};
use crate::tensor::{derive_seed, parse_named, write_named, Fill, Rng, Tensor};

/// A trainable tensor. `decay` is false for parameters kept out of weight
/// decay (the SC-Module's `(α, λ)` bias).
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub decay: bool,
}

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    Conv {
        w: usize,
        b: Option<usize>,
        stride: usize,
        padding: usize,
    },
    Identity,
    Bn {
        gamma: usize,
        beta: usize,
        stats: usize,
    },
    Dn {
        geom: ScGeometry,
        w: DnWeights<usize>,
        stats: usize,
    },
    SeBn {
        se: SeParams<usize>,
        gamma: usize,
        beta: usize,
        stats: usize,
    },
    Relu,
    Gap,
    Fc {
        w: usize,
        b: Option<usize>,
        groups: usize,
    },
}

/// `(α, λ)` emitted by one DN layer during a forward pass.
pub struct AffineOut<V> {
    pub layer: String,
    pub alpha: V,
    pub lambda: V,
}

pub struct ForwardOut<V> {
    pub logits: V,
    /// One entry per DN layer, in network order.
    pub affine: Vec<AffineOut<V>>,
}

/// An instantiated [`ModelSpec`]: a flat parameter list plus one set of
/// running statistics per normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    names: Vec<String>,
    layers: Vec<Layer>,
    pub params: Vec<Param>,
    pub stats: Vec<RunningStats>,
    stat_names: Vec<String>,
}

fn he_normal(dims: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor> {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::create(Fill::Normal { mean: 0.0, std }, dims, rng)
}

fn uniform_fan_in(dims: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::create(Fill::Uniform { lo: -bound, hi: bound }, dims, rng)
}

struct Builder {
    params: Vec<Param>,
    stats: Vec<RunningStats>,
    stat_names: Vec<String>,
}

impl Builder {
    fn add(&mut self, layer: &str, name: &str, value: Tensor) -> usize {
        self.params.push(Param {
            name: format!("{layer}/{name}"),
            value,
            decay: !matches!(name, "fc2_b" | "fc2_mean_b"),
        });
        self.params.len() - 1
    }

    fn add_stats(&mut self, layer: &str, channels: usize) -> Result<usize> {
        self.stats.push(RunningStats::new(channels)?);
        self.stat_names.push(layer.to_string());
        Ok(self.stats.len() - 1)
    }
}

impl Network {
    /// Instantiates `spec`. Each layer draws from its own stream derived
    /// from `(seed, layer index)`, so two specs differing only in their norm
    /// slots share every conv and classifier initialization.
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let names = layer_names(spec);
        let mut b = Builder {
            params: Vec::new(),
            stats: Vec::new(),
            stat_names: Vec::new(),
        };
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, (l, name)) in spec.layers.iter().zip(&names).enumerate() {
            let mut rng = Rng::new(derive_seed(&[seed, i as u64]));
            let layer = match *l {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => {
                    let fan_in = in_channels * kernel * kernel;
                    let w = he_normal(&[out_channels, in_channels, kernel, kernel], fan_in, &mut rng)?;
                    let w = b.add(name, "w", w);
                    let bias = match bias {
                        true => Some(b.add(name, "b", Tensor::zeros(&[out_channels])?)),
                        false => None,
                    };
                    Layer::Conv {
                        w,
                        b: bias,
                        stride,
                        padding,
                    }
                }
                LayerSpec::Norm { channels, norm } => match norm.kind {
                    NormKind::None => Layer::Identity,
                    NormKind::Bn => Layer::Bn {
                        gamma: b.add(name, "gamma", Tensor::ones(&[channels])?),
                        beta: b.add(name, "beta", Tensor::zeros(&[channels])?),
                        stats: b.add_stats(name, channels)?,
                    },
                    NormKind::Dn(variant) => {
                        let geom = ScConfig::new(channels, norm.r, norm.g).geometry()?;
                        let init = DnWeights::identity_init(variant, &geom, &mut rng)?;
                        let ids = init.parts().into_iter().map(|(n, t)| b.add(name, n, t.clone())).collect();
                        Layer::Dn {
                            geom,
                            w: DnWeights::from_parts(variant, ids)?,
                            stats: b.add_stats(name, channels)?,
                        }
                    }
                    NormKind::SeBn => {
                        let se = SeParams::init(channels, norm.r, &mut rng)?;
                        let se = SeParams {
                            fc1_w: b.add(name, "se_fc1_w", se.fc1_w),
                            fc1_b: b.add(name, "se_fc1_b", se.fc1_b),
                            fc2_w: b.add(name, "se_fc2_w", se.fc2_w),
                            fc2_b: b.add(name, "se_fc2_b", se.fc2_b),
                        };
                        Layer::SeBn {
                            se,
                            gamma: b.add(name, "gamma", Tensor::ones(&[channels])?),
                            beta: b.add(name, "beta", Tensor::zeros(&[channels])?),
                            stats: b.add_stats(name, channels)?,
                        }
                    }
                },
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Gap => Layer::Gap,
                LayerSpec::Fc {
                    in_features,
                    out_features,
                    groups,
                    bias,
                } => {
                    let fan_in = in_features / groups;
                    let w = b.add(name, "w", uniform_fan_in(&[out_features, fan_in], fan_in, &mut rng)?);
                    let bias = match bias {
                        true => Some(b.add(name, "b", uniform_fan_in(&[out_features], fan_in, &mut rng)?)),
                        false => None,
                    };
                    Layer::Fc { w, b: bias, groups }
                }
                LayerSpec::Classifier { in_features, classes } => {
                    let w = b.add(name, "w", uniform_fan_in(&[classes, in_features], in_features, &mut rng)?);
                    let bias = b.add(name, "b", uniform_fan_in(&[classes], in_features, &mut rng)?);
                    Layer::Fc {
                        w,
                        b: Some(bias),
                        groups: 1,
                    }
                }
            };
            layers.push(layer);
        }
        Ok(Network {
            spec: spec.clone(),
            names,
            layers,
            params: b.params,
            stats: b.stats,
            stat_names: b.stat_names,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Total element count of all trainable tensors.
    pub fn trainable_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Names of the DN layers, in network order.
    pub fn dn_layers(&self) -> Vec<&str> {
        self.layers
            .iter()
            .zip(&self.names)
            .filter(|(l, _)| matches!(l, Layer::Dn { .. }))
            .map(|(_, n)| n.as_str())
            .collect()
    }

    /// Registers every parameter with `g`, in `params` order.
    pub fn leaves<G: Ops>(&self, g: &mut G) -> Vec<G::V> {
        self.params.iter().map(|p| g.leaf(p.value.clone())).collect()
    }

    /// Forward pass with parameter values `p` (from [`Network::leaves`]).
    /// Training mode updates the running statistics.
    pub fn forward<G: Ops>(&mut self, g: &mut G, p: &[G::V], x: &G::V, mode: Mode) -> Result<ForwardOut<G::V>> {
        if p.len() != self.params.len() {
            return shape_err(format!("expected {} parameters, got {}", self.params.len(), p.len()));
        }
        let [c, h, w] = self.spec.input;
        let d = g.value(x).dims();
        if d.len() != 4 || d[1..] != [c, h, w] {
            return shape_err(format!("network expects (N,{c},{h},{w}) input, got {}", g.value(x).shape()));
        }
        let mut cur = x.clone();
        let mut affine = Vec::new();
        for (layer, name) in self.layers.iter().zip(&self.names) {
            cur = match layer {
                Layer::Conv { w, b, stride, padding } => {
                    g.conv2d(&cur, &p[*w], b.map(|i| &p[i]), *stride, *padding)?
                }
                Layer::Identity => cur,
                Layer::Bn { gamma, beta, stats } => {
                    bn_forward(g, &cur, &p[*gamma], &p[*beta], &mut self.stats[*stats], mode)?
                }
                Layer::Dn { geom, w, stats } => {
                    let wv = w.map(|&i| p[i].clone());
                    let out = dn_forward(g, &cur, geom, &wv, &mut self.stats[*stats], mode)?;
                    affine.push(AffineOut {
                        layer: name.clone(),
                        alpha: out.alpha,
                        lambda: out.lambda,
                    });
                    out.out
                }
                Layer::SeBn { se, gamma, beta, stats } => {
                    let sv = se.map(|&i| p[i].clone());
                    se_bn_forward(g, &cur, &sv, &p[*gamma], &p[*beta], &mut self.stats[*stats], mode)?
                }
                Layer::Relu => g.relu(&cur)?,
                Layer::Gap => g.global_avg_pool(&cur)?,
                Layer::Fc { w, b, groups } => g.grouped_fc(&cur, &p[*w], b.map(|i| &p[i]), *groups)?,
            };
        }
        Ok(ForwardOut { logits: cur, affine })
    }

    /// Eager forward returning logits only.
    pub fn logits(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let p = self.leaves(&mut Eager);
        Ok(self.forward(&mut Eager, &p, x, mode)?.logits)
    }

    /// Named-tensor dump of parameters followed by running statistics
    /// (`<layer>/running_mean`, `<layer>/running_var`).
    pub fn dump(&self) -> String {
        let mut items: Vec<(String, &Tensor)> = self.params.iter().map(|p| (p.name.clone(), &p.value)).collect();
        for (s, layer) in self.stats.iter().zip(&self.stat_names) {
            items.push((format!("{layer}/running_mean"), &s.mean));
            items.push((format!("{layer}/running_var"), &s.var));
        }
        write_named(items.iter().map(|(n, t)| (n.as_str(), *t)))
    }

    /// Loads a [`Network::dump`] produced by a network of the same spec.
    pub fn load(&mut self, text: &str) -> Result<()> {
        let entries = parse_named(text)?;
        let expected = self.params.len() + 2 * self.stats.len();
        if entries.len() != expected {
            return config_err(format!("dump has {} tensors, network needs {expected}", entries.len()));
        }
        let mut it = entries.into_iter();
        let mut take = |name: &str, like: &Tensor| -> Result<Tensor> {
            let (n, t) = it.next().expect("count checked");
            if n != name || t.shape() != like.shape() {
                return Err(Error::Config(format!(
                    "dump entry {n} {} does not match {name} {}",
                    t.shape(),
                    like.shape()
                )));
            }
            Ok(t)
        };
        let mut params = self.params.clone();
        for p in &mut params {
            p.value = take(&p.name, &p.value)?;
        }
        let mut stats = self.stats.clone();
        for (s, layer) in stats.iter_mut().zip(&self.stat_names) {
            s.mean = take(&format!("{layer}/running_mean"), &s.mean)?;
            s.var = take(&format!("{layer}/running_var"), &s.var)?;
        }
        self.params = params;
        self.stats = stats;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::norm::{DnVariant, GroupWidth};
    use crate::zoo::{build_toycnn, count_params, NormSpec};

    fn randn(dims: &[usize], seed: u64) -> Tensor {
        Tensor::create(Fill::Normal { mean: 0.0, std: 1.0 }, dims, &mut Rng::new(seed)).unwrap()
    }

    fn kinds() -> Vec<NormSpec> {
        let g = GroupWidth::PerGroup(2);
        vec![
            NormSpec::bn(),
            NormSpec::new(NormKind::None, 1, g),
            NormSpec::new(NormKind::Dn(DnVariant::B), 4, g),
            NormSpec::new(NormKind::Dn(DnVariant::CA), 4, g),
            NormSpec::new(NormKind::Dn(DnVariant::CB), 4, GroupWidth::Oup),
            NormSpec::new(NormKind::SeBn, 4, g),
        ]
    }

    #[test]
    fn instantiated_elements_match_cost_model() {
        for n in kinds() {
            let spec = build_toycnn(n, 0.5, 4, [3, 8, 8]).unwrap();
            let net = Network::new(&spec, 0).unwrap();
            assert_eq!(net.trainable_elements(), count_params(&spec).unwrap().params, "{n:?}");
        }
    }

    #[test]
    fn forward_shapes_and_affine_records() {
        for n in kinds() {
            let spec = build_toycnn(n, 0.5, 4, [3, 8, 8]).unwrap();
            let mut net = Network::new(&spec, 1).unwrap();
            let y = net.logits(&randn(&[2, 3, 8, 8], 2), Mode::Train).unwrap();
            assert_eq!(y.dims(), &[2, 4]);
            assert!(y.is_finite());
        }
        let spec = build_toycnn(kinds()[2], 0.5, 4, [3, 8, 8]).unwrap();
        let mut net = Network::new(&spec, 1).unwrap();
        let p = net.leaves(&mut Eager);
        let out = net.forward(&mut Eager, &p, &randn(&[2, 3, 8, 8], 3), Mode::Train).unwrap();
        assert_eq!(out.affine.len(), 6);
        assert_eq!(out.affine[0].layer, "norm0");
        assert_eq!(out.affine[5].alpha.dims(), &[2, 32]);
        assert_eq!(net.dn_layers(), ["norm0", "norm1", "norm2", "norm3", "norm4", "norm5"]);
    }

    #[test]
    fn identity_dnb_twin_matches_bn_bitwise() {
        let dn = kinds()[2];
        let mut bn_net = Network::new(&build_toycnn(NormSpec::bn(), 0.5, 4, [3, 8, 8]).unwrap(), 7).unwrap();
        let mut dn_net = Network::new(&build_toycnn(dn, 0.5, 4, [3, 8, 8]).unwrap(), 7).unwrap();
        let x = randn(&[4, 3, 8, 8], 8);
        for mode in [Mode::Train, Mode::Eval] {
            assert_eq!(bn_net.logits(&x, mode).unwrap(), dn_net.logits(&x, mode).unwrap());
        }
    }

    #[test]
    fn decay_flags() {
        let spec = build_toycnn(kinds()[4], 0.5, 4, [3, 8, 8]).unwrap();
        let net = Network::new(&spec, 0).unwrap();
        let no_decay: Vec<&str> = net.params.iter().filter(|p| !p.decay).map(|p| p.name.as_str()).collect();
        assert_eq!(no_decay.len(), 6);
        assert!(no_decay.iter().all(|n| n.ends_with("/fc2_mean_b")));
    }

    #[test]
    fn dump_round_trip() {
        let spec = build_toycnn(kinds()[2], 0.5, 4, [3, 8, 8]).unwrap();
        let mut a = Network::new(&spec, 3).unwrap();
        a.logits(&randn(&[2, 3, 8, 8], 4), Mode::Train).unwrap();
        let mut b = Network::new(&spec, 99).unwrap();
        b.load(&a.dump()).unwrap();
        assert_eq!(a, b);
        let other = Network::new(&build_toycnn(NormSpec::bn(), 0.5, 4, [3, 8, 8]).unwrap(), 0).unwrap();
        assert!(b.load(&other.dump()).is_err());
    }

    #[test]
    fn recorded_forward_matches_eager() {
        let spec = build_toycnn(kinds()[5], 0.5, 4, [3, 8, 8]).unwrap();
        let mut a = Network::new(&spec, 5).unwrap();
        let mut b = a.clone();
        let x = randn(&[3, 3, 8, 8], 6);
        let want = a.logits(&x, Mode::Train).unwrap();
        let mut tape = Tape::new();
        let p = b.leaves(&mut tape);
        let xv = tape.leaf(x);
        let y = b.forward(&mut tape, &p, &xv, Mode::Train).unwrap().logits;
        assert_eq!(tape.value(&y), &want);
        assert!(b.forward(&mut tape, &p[1..], &xv, Mode::Train).is_err());
    }
}
