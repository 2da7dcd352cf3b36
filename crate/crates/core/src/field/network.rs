use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{FieldConfig, NetShape};
use crate::error::{Error, Result};
use crate::numerics::{Activation, DenseArray, Mlp, MlpSpec, ParamId, ParamStore, ParamVars, Real, Tape, Var};

/// Per-group codes: one row per frame (training) or per control setting.
#[derive(Clone, Copy, Debug)]
pub struct GroupCodes {
    pub omega: Var,
    pub psi: Var,
    pub alpha: Var,
}

/// Tape nodes for a batch of points, one row per point.
#[derive(Clone, Debug)]
pub struct FieldVars {
    pub sigma: Var,
    pub color: Var,
    pub masks: Var,
    pub warped: Var,
    pub hyper: Var,
}

/// Warped encoding and raw slicing coordinates shared by the template,
/// mask and uncertainty heads.
#[derive(Clone, Debug)]
pub struct Sliced {
    pub encoded: Var,
    pub warped: Var,
    pub warped_encoded: Var,
    pub w0: Var,
    pub w: Vec<Var>,
}

/// Plain-value result of a single field query.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldOutput {
    pub sigma: f64,
    pub color: [f64; 3],
    pub masks: Vec<f64>,
    pub beta: Vec<f64>,
    pub warped: [f64; 3],
    pub hyper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum QueryMode {
    /// Codes of training frame `latent`; attributes predicted from its
    /// deformation code unless `teacher` supplies them.
    Train { latent: usize, teacher: Option<Vec<f64>> },
    /// Explicit attributes with the reference codes.
    Control { alpha: Vec<f64> },
    /// Explicit attributes and codes, e.g. interpolated between frames.
    Explicit { alpha: Vec<f64>, omega: Vec<f64>, psi: Vec<f64> },
}

impl QueryMode {
    /// True when a control vector lies outside [-1, 1] and will be clamped.
    pub fn needs_clamp(&self) -> bool {
        match self {
            QueryMode::Train { .. } => false,
            QueryMode::Control { alpha } | QueryMode::Explicit { alpha, .. } => alpha.iter().any(|v| v.abs() > 1.0),
        }
    }
}

/// The controllable field: attribute network, deformation, slicing
/// surfaces, region masks, uncertainty heads and template, plus per-frame
/// deformation/appearance codes.
#[derive(Clone, Debug)]
pub struct SceneField<S: Real = f32> {
    config: FieldConfig,
    store: ParamStore<S>,
    omega: ParamId,
    psi: ParamId,
    attribute: Mlp,
    deformation: Mlp,
    slicing: Vec<Mlp>,
    masks: Vec<Mlp>,
    uncertainty: Vec<Mlp>,
    trunk: Mlp,
    density: Mlp,
    feature: Mlp,
    color: Mlp,
    /// Deformation and appearance codes used in control mode.
    pub reference_omega: Vec<f64>,
    pub reference_psi: Vec<f64>,
}

pub(crate) struct Layout {
    pub attribute: MlpSpec,
    pub deformation: MlpSpec,
    pub slicing: Vec<MlpSpec>,
    pub masks: Vec<MlpSpec>,
    pub uncertainty: Vec<MlpSpec>,
    pub trunk: MlpSpec,
    pub density: MlpSpec,
    pub feature: MlpSpec,
    pub color: MlpSpec,
}

fn head(input: usize, shape: &NetShape, output: usize) -> MlpSpec {
    let mut widths = shape.hidden.clone();
    widths.push(output);
    let mut activations = vec![Activation::Relu; shape.hidden.len()];
    activations.push(Activation::None);
    MlpSpec {
        input_dim: input,
        widths,
        activations,
        skip: shape.skip,
    }
}

impl Layout {
    pub(crate) fn new(c: &FieldConfig) -> Self {
        let (k, dw, pos) = (c.attribute_count(), c.hyper_dim, c.position_width());
        let masks = (1..=c.region_count())
            .map(|n| {
                let members = c.topology.attributes_of(n).len();
                head(pos + dw * (1 + members), &c.mask_net, 1)
            })
            .collect();
        let mut slicing = vec![head(pos + c.deformation_dim, &c.slicing_net, dw)];
        slicing.extend((0..k).map(|_| head(pos + 1, &c.slicing_net, dw)));
        let trunk_width = *c.template_net.hidden.last().expect("validated");
        Self {
            attribute: head(c.deformation_dim, &c.attribute_net, k),
            deformation: head(pos + c.deformation_dim, &c.deformation_net, 3),
            slicing,
            masks,
            uncertainty: (0..k).map(|_| head(pos + 2 * dw, &c.uncertainty_net, 1)).collect(),
            trunk: MlpSpec {
                input_dim: pos + c.hyper_width(),
                widths: c.template_net.hidden.clone(),
                activations: vec![Activation::Relu; c.template_net.hidden.len()],
                skip: c.template_net.skip,
            },
            density: MlpSpec::uniform(trunk_width, 0, 0, 1, Activation::None, None),
            feature: MlpSpec::uniform(trunk_width, 0, 0, trunk_width, Activation::None, None),
            color: head(trunk_width + c.direction_width() + c.appearance_dim, &NetShape::new(&[c.color_width], None), 3),
        }
    }
}

const SMALL_HEAD: f64 = 1e-2;

impl<S: Real> SceneField<S> {
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let codes = |store: &mut ParamStore<S>, name: &str, dim: usize, rng: &mut ChaCha8Rng| {
            let v = DenseArray::from_fn(&[config.latent_count, dim], |_| S::of(rng.gen_range(-0.01..0.01)));
            store.add(name, v)
        };
        let omega = codes(&mut store, "codes.deformation", config.deformation_dim, &mut rng);
        let psi = codes(&mut store, "codes.appearance", config.appearance_dim, &mut rng);
        let attribute = Mlp::new(layout.attribute, "attribute", &mut store, &mut rng, 1.0)?;
        let deformation = Mlp::new(layout.deformation, "deformation", &mut store, &mut rng, 0.0)?;
        let slicing = layout
            .slicing
            .into_iter()
            .enumerate()
            .map(|(i, spec)| Mlp::new(spec, &format!("slicing{i}"), &mut store, &mut rng, 1.0))
            .collect::<Result<_>>()?;
        let masks = layout
            .masks
            .into_iter()
            .enumerate()
            .map(|(n, spec)| Mlp::new(spec, &format!("mask{}", n + 1), &mut store, &mut rng, SMALL_HEAD))
            .collect::<Result<_>>()?;
        let uncertainty = layout
            .uncertainty
            .into_iter()
            .enumerate()
            .map(|(i, spec)| Mlp::new(spec, &format!("uncertainty{}", i + 1), &mut store, &mut rng, SMALL_HEAD))
            .collect::<Result<_>>()?;
        let trunk = Mlp::new(layout.trunk, "template.trunk", &mut store, &mut rng, 1.0)?;
        let density = Mlp::new(layout.density, "template.density", &mut store, &mut rng, SMALL_HEAD)?;
        let (_, bias) = density.layer_ids()[0];
        store.get_mut(bias).data_mut()[0] = S::of(config.density_bias);
        let feature = Mlp::new(layout.feature, "template.feature", &mut store, &mut rng, 1.0)?;
        let color = Mlp::new(layout.color, "template.color", &mut store, &mut rng, 1.0)?;
        Ok(Self {
            reference_omega: vec![0.0; config.deformation_dim],
            reference_psi: vec![0.0; config.appearance_dim],
            config,
            store,
            omega,
            psi,
            attribute,
            deformation,
            slicing,
            masks,
            uncertainty,
            trunk,
            density,
            feature,
            color,
        })
    }

    /// Rebuild around an existing parameter store (checkpoint loading).
    pub(crate) fn from_store(config: FieldConfig, store: ParamStore<S>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let find = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))
        };
        let omega = find("codes.deformation")?;
        let psi = find("codes.appearance")?;
        for (id, dim) in [(omega, config.deformation_dim), (psi, config.appearance_dim)] {
            if store.get(id).shape() != [config.latent_count, dim] {
                return Err(Error::Checkpoint(format!("code table {} has the wrong shape", store.name(id))));
            }
        }
        let attach_all = |specs: Vec<MlpSpec>, name: &dyn Fn(usize) -> String| -> Result<Vec<Mlp>> {
            specs
                .into_iter()
                .enumerate()
                .map(|(i, s)| Mlp::attach(s, &name(i), &store))
                .collect()
        };
        Ok(Self {
            attribute: Mlp::attach(layout.attribute, "attribute", &store)?,
            deformation: Mlp::attach(layout.deformation, "deformation", &store)?,
            slicing: attach_all(layout.slicing, &|i| format!("slicing{i}"))?,
            masks: attach_all(layout.masks, &|n| format!("mask{}", n + 1))?,
            uncertainty: attach_all(layout.uncertainty, &|i| format!("uncertainty{}", i + 1))?,
            trunk: Mlp::attach(layout.trunk, "template.trunk", &store)?,
            density: Mlp::attach(layout.density, "template.density", &store)?,
            feature: Mlp::attach(layout.feature, "template.feature", &store)?,
            color: Mlp::attach(layout.color, "template.color", &store)?,
            reference_omega: vec![0.0; config.deformation_dim],
            reference_psi: vec![0.0; config.appearance_dim],
            omega,
            psi,
            config,
            store,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    pub fn deformation_codes(&self) -> ParamId {
        self.omega
    }

    pub fn appearance_codes(&self) -> ParamId {
        self.psi
    }

    pub fn attribute_count(&self) -> usize {
        self.config.attribute_count()
    }

    pub fn region_count(&self) -> usize {
        self.config.region_count()
    }

    /// Parameter ids of every network, for tests and diagnostics.
    pub fn network_blocks(&self, network: &str) -> Vec<ParamId> {
        let prefix = format!("{network}.");
        self.store
            .ids()
            .filter(|&id| self.store.name(id).starts_with(&prefix))
            .collect()
    }

    /// Set the control-mode codes to the mean of the rows in `latents`.
    pub fn set_reference_from(&mut self, latents: &[usize]) {
        let mean = |id: ParamId| -> Vec<f64> {
            let table = self.store.get(id);
            let mut out = vec![0.0; table.cols()];
            for &l in latents {
                for (o, v) in out.iter_mut().zip(table.row(l)) {
                    *o += v.as_f64();
                }
            }
            out.iter_mut().for_each(|o| *o /= latents.len().max(1) as f64);
            out
        };
        self.reference_omega = mean(self.omega);
        self.reference_psi = mean(self.psi);
    }

    /// Row `latent` of a code table as f64.
    pub fn code_row(&self, table: ParamId, latent: usize) -> Vec<f64> {
        self.store.get(table).row(latent).iter().map(|v| v.as_f64()).collect()
    }

    // ---- individual stages ------------------------------------------------

    /// `tanh(A(omega))`, one row of K attributes per code row.
    pub fn eval_attributes(&self, tape: &mut Tape<S>, params: &ParamVars, omega: Var) -> Result<Var> {
        let raw = self.attribute.forward(tape, params, omega)?;
        Ok(tape.tanh(raw))
    }

    /// `x' = x + max_offset * tanh(T(enc x, omega))`.
    pub fn eval_deformation(
        &self,
        tape: &mut Tape<S>,
        params: &ParamVars,
        positions: Var,
        encoded_with_omega: Var,
    ) -> Result<Var> {
        let raw = self.deformation.forward(tape, params, encoded_with_omega)?;
        let bounded = tape.tanh(raw);
        let offset = tape.scale(bounded, self.config.max_offset);
        Ok(tape.add(positions, offset))
    }

    /// `w_0 = H_0(enc x, omega)` and `w_i = H_i(enc x, alpha_i)`.
    pub fn eval_slicing_surfaces(
        &self,
        tape: &mut Tape<S>,
        params: &ParamVars,
        encoded: Var,
        encoded_with_omega: Var,
        alpha: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let w0 = self.slicing[0].forward(tape, params, encoded_with_omega)?;
        let mut w = Vec::with_capacity(self.attribute_count());
        for i in 0..self.attribute_count() {
            let a = tape.columns(alpha, i, 1);
            let input = tape.concat(&[encoded, a]);
            w.push(self.slicing[i + 1].forward(tape, params, input)?);
        }
        Ok((w0, w))
    }

    /// Logit of each region `n = 1..=N` from `(enc x', w_0, w of the
    /// region's attributes)`, each `[rows, 1]`.
    pub fn eval_mask_logits(
        &self,
        tape: &mut Tape<S>,
        params: &ParamVars,
        warped_encoded: Var,
        w0: Var,
        w: &[Var],
    ) -> Result<Vec<Var>> {
        let mut logits = Vec::with_capacity(self.masks.len());
        for (n, net) in self.masks.iter().enumerate() {
            let mut parts = vec![warped_encoded, w0];
            parts.extend(self.config.topology.attributes_of(n + 1).into_iter().map(|a| w[a]));
            let input = tape.concat(&parts);
            logits.push(net.forward(tape, params, input)?);
        }
        Ok(logits)
    }

    /// Region logits normalized together with a fixed zero background logit
    /// into `N + 1` weights that sum to one.
    pub fn eval_masks(
        &self,
        tape: &mut Tape<S>,
        params: &ParamVars,
        warped_encoded: Var,
        w0: Var,
        w: &[Var],
    ) -> Result<Var> {
        let rows = tape.value(w0).rows();
        let mut logits = vec![tape.constant(DenseArray::zeros(&[rows, 1]))];
        logits.extend(self.eval_mask_logits(tape, params, warped_encoded, w0, w)?);
        let all = tape.concat(&logits);
        Ok(tape.softmax(all))
    }

    /// `[w_0 m_0, w_1 m_region(1), .., w_K m_region(K)]`.
    pub fn compose_hyperspace(&self, tape: &mut Tape<S>, w0: Var, w: &[Var], masks: Var) -> Var {
        let m0 = tape.columns(masks, 0, 1);
        let mut parts = vec![tape.mul_column(w0, m0)];
        for (i, &wi) in w.iter().enumerate() {
            let m = tape.columns(masks, self.config.topology.region_of(i), 1);
            parts.push(tape.mul_column(wi, m));
        }
        tape.concat(&parts)
    }

    /// Density from position and hyper coordinates only; color additionally
    /// sees the encoded view direction and the appearance code.
    pub fn eval_template(
        &self,
        tape: &mut Tape<S>,
        params: &ParamVars,
        warped_encoded: Var,
        hyper: Var,
        directions: Var,
        psi: Var,
    ) -> Result<(Var, Var)> {
        let input = tape.concat(&[warped_encoded, hyper]);
        let h = self.trunk.forward(tape, params, input)?;
        let raw_sigma = self.density.forward(tape, params, h)?;
        let sigma = tape.softplus(raw_sigma);
        let feature = self.feature.forward(tape, params, h)?;
        let dirs = tape.positional_encode(directions, self.config.direction_frequencies, true);
        let color_in = tape.concat(&[feature, dirs, psi]);
        let raw_color = self.color.forward(tape, params, color_in)?;
        Ok((sigma, tape.sigmoid(raw_color)))
    }

    /// `beta_i = softplus(B_i(enc x', w_0, w_i)) + floor`, as `[rows, K]`.
    pub fn eval_uncertainty(
        &self,
        tape: &mut Tape<S>,
        params: &ParamVars,
        warped_encoded: Var,
        w0: Var,
        w: &[Var],
    ) -> Result<Var> {
        let mut betas = Vec::with_capacity(w.len());
        for (net, &wi) in self.uncertainty.iter().zip(w) {
            let input = tape.concat(&[warped_encoded, w0, wi]);
            let raw = net.forward(tape, params, input)?;
            let b = tape.softplus(raw);
            betas.push(tape.affine(b, 1.0, self.config.beta_floor));
        }
        Ok(tape.concat(&betas))
    }

    // ---- codes -------------------------------------------------------------

    /// Codes for training frames. Attributes with `delta` set use the
    /// ground truth (teacher forcing); the rest use the attribute network.
    /// Also returns the predicted attributes `[groups, K]`.
    pub fn train_codes(
        &self,
        tape: &mut Tape<S>,
        params: &ParamVars,
        latents: &[usize],
        alpha_gt: &[f64],
        delta: &[bool],
    ) -> Result<(GroupCodes, Var)> {
        let k = self.attribute_count();
        let g = latents.len();
        if alpha_gt.len() != g * k || delta.len() != g * k {
            return Err(Error::dimension("teacher attributes", g * k, alpha_gt.len().min(delta.len())));
        }
        let omega = tape.gather_rows(params[self.omega], latents);
        let psi = tape.gather_rows(params[self.psi], latents);
        let predicted = self.eval_attributes(tape, params, omega)?;
        let alpha = if delta.iter().all(|&d| d) {
            tape.constant(DenseArray::from_f64(&[g, k], alpha_gt)?)
        } else {
            let keep: Vec<f64> = delta.iter().map(|&d| if d { 0.0 } else { 1.0 }).collect();
            let forced: Vec<f64> = alpha_gt.iter().zip(delta).map(|(&a, &d)| if d { a } else { 0.0 }).collect();
            let keep = tape.constant(DenseArray::from_f64(&[g, k], &keep)?);
            let forced = tape.constant(DenseArray::from_f64(&[g, k], &forced)?);
            let free = tape.mul(predicted, keep);
            tape.add(free, forced)
        };
        Ok((GroupCodes { omega, psi, alpha }, predicted))
    }

    /// Codes for control renders: explicit attributes (clamped to [-1, 1])
    /// with the given deformation and appearance codes, one group per row.
    pub fn control_codes(
        &self,
        tape: &mut Tape<S>,
        alphas: &[Vec<f64>],
        omega: &[f64],
        psi: &[f64],
    ) -> Result<GroupCodes> {
        let k = self.attribute_count();
        let g = alphas.len();
        let mut flat = Vec::with_capacity(g * k);
        for a in alphas {
            if a.len() != k {
                return Err(Error::dimension("control attributes", k, a.len()));
            }
            flat.extend(a.iter().map(|v| v.clamp(-1.0, 1.0)));
        }
        if omega.len() != self.config.deformation_dim || psi.len() != self.config.appearance_dim {
            return Err(Error::dimension("control codes", self.config.deformation_dim, omega.len()));
        }
        let repeat = |v: &[f64]| -> Result<DenseArray<S>> {
            DenseArray::from_f64(&[g, v.len()], &v.repeat(g))
        };
        Ok(GroupCodes {
            omega: tape.constant(repeat(omega)?),
            psi: tape.constant(repeat(psi)?),
            alpha: tape.constant(DenseArray::from_f64(&[g, k], &flat)?),
        })
    }

    // ---- composed passes ---------------------------------------------------

    /// Slicing and deformation for points whose group index is `groups[p]`.
    pub fn slice(
        &self,
        tape: &mut Tape<S>,
        params: &ParamVars,
        positions: Var,
        codes: &GroupCodes,
        groups: &[usize],
    ) -> Result<Sliced> {
        let c = &self.config;
        let scaled = tape.scale(positions, c.position_scale);
        let encoded = tape.positional_encode(scaled, c.position_frequencies, true);
        let omega = tape.gather_rows(codes.omega, groups);
        let alpha = tape.gather_rows(codes.alpha, groups);
        let encoded_with_omega = tape.concat(&[encoded, omega]);
        let (w0, w) = self.eval_slicing_surfaces(tape, params, encoded, encoded_with_omega, alpha)?;
        let warped = self.eval_deformation(tape, params, positions, encoded_with_omega)?;
        let warped_scaled = tape.scale(warped, c.position_scale);
        let warped_encoded = tape.positional_encode(warped_scaled, c.position_frequencies, true);
        Ok(Sliced {
            encoded,
            warped,
            warped_encoded,
            w0,
            w,
        })
    }

    /// Full field for `positions`/`directions` (`[P, 3]` each).
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        params: &ParamVars,
        positions: Var,
        directions: Var,
        codes: &GroupCodes,
        groups: &[usize],
    ) -> Result<FieldVars> {
        let rows = tape.value(positions).rows();
        if groups.len() != rows || tape.value(directions).rows() != rows {
            return Err(Error::dimension("points", rows, groups.len()));
        }
        let s = self.slice(tape, params, positions, codes, groups)?;
        let masks = self.eval_masks(tape, params, s.warped_encoded, s.w0, &s.w)?;
        let hyper = self.compose_hyperspace(tape, s.w0, &s.w, masks);
        let psi = tape.gather_rows(codes.psi, groups);
        let (sigma, color) = self.eval_template(tape, params, s.warped_encoded, hyper, directions, psi)?;
        Ok(FieldVars {
            sigma,
            color,
            masks,
            warped: s.warped,
            hyper,
        })
    }

    /// Uncertainties `[P, K]` at `positions`.
    pub fn uncertainty(
        &self,
        tape: &mut Tape<S>,
        params: &ParamVars,
        positions: Var,
        codes: &GroupCodes,
        groups: &[usize],
    ) -> Result<Var> {
        let s = self.slice(tape, params, positions, codes, groups)?;
        self.eval_uncertainty(tape, params, s.warped_encoded, s.w0, &s.w)
    }

    /// Single-group codes for a query mode; control vectors are clamped with
    /// a warning.
    pub fn mode_codes(&self, tape: &mut Tape<S>, params: &ParamVars, mode: &QueryMode) -> Result<GroupCodes> {
        let k = self.attribute_count();
        if mode.needs_clamp() {
            warn!("control values outside [-1, 1] are clamped");
        }
        match mode {
            QueryMode::Train { latent, teacher } => {
                if *latent >= self.config.latent_count {
                    return Err(Error::Validation(format!("latent index {latent} out of range")));
                }
                let (alpha, delta) = match teacher {
                    Some(a) => (a.clone(), vec![true; k]),
                    None => (vec![0.0; k], vec![false; k]),
                };
                Ok(self.train_codes(tape, params, &[*latent], &alpha, &delta)?.0)
            }
            QueryMode::Control { alpha } => {
                self.control_codes(tape, &[alpha.clone()], &self.reference_omega, &self.reference_psi)
            }
            QueryMode::Explicit { alpha, omega, psi } => self.control_codes(tape, &[alpha.clone()], omega, psi),
        }
    }

    /// Evaluate the field at individual points without recording gradients
    /// for later use.
    pub fn query(&self, points: &[([f64; 3], [f64; 3])], mode: &QueryMode) -> Result<Vec<FieldOutput>> {
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape);
        let codes = self.mode_codes(&mut tape, &params, mode)?;
        for (_, d) in points {
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!("view direction {d:?} is not unit length")));
            }
        }
        let flat = |f: fn(&([f64; 3], [f64; 3])) -> [f64; 3]| -> Result<DenseArray<S>> {
            let v: Vec<f64> = points.iter().flat_map(f).collect();
            DenseArray::from_f64(&[points.len(), 3], &v)
        };
        let positions = tape.constant(flat(|p| p.0)?);
        let directions = tape.constant(flat(|p| p.1)?);
        let groups = vec![0; points.len()];
        let out = self.forward(&mut tape, &params, positions, directions, &codes, &groups)?;
        let beta = self.uncertainty(&mut tape, &params, positions, &codes, &groups)?;
        let row = |v: Var, p: usize| -> Vec<f64> { tape.value(v).row(p).iter().map(|x| x.as_f64()).collect() };
        Ok((0..points.len())
            .map(|p| {
                let c = row(out.color, p);
                let x = row(out.warped, p);
                FieldOutput {
                    sigma: row(out.sigma, p)[0],
                    color: [c[0], c[1], c[2]],
                    masks: row(out.masks, p),
                    beta: row(beta, p),
                    warped: [x[0], x[1], x[2]],
                    hyper: row(out.hyper, p),
                }
            })
            .collect())
    }

    /// Same weights in another precision.
    pub fn cast<T: Real>(&self) -> SceneField<T> {
        let mut out = SceneField::<T>::from_store(self.config.clone(), self.store.cast())
            .expect("layout is unchanged by a cast");
        out.reference_omega = self.reference_omega.clone();
        out.reference_psi = self.reference_psi.clone();
        out
    }
}
