//! Closed-form parameter counting, written directly from the architecture
//! description rather than by walking a built model. An FC layer `a -> b`
//! costs `a*b + b`; a batch norm over `c` channels costs `2c` (running
//! statistics are buffers, not parameters); a geometric affine over `d`
//! channels costs `2d`; a bottleneck residual block of width `d` and factor
//! `r` costs `2d^2/r + 3d/r + 3d`.

use pointmlp_core::model::ModelConfig;

fn fc(d_in: usize, d_out: usize) -> usize {
    d_in * d_out + d_out
}

fn bn(c: usize) -> usize {
    2 * c
}

fn block(d: usize, r: usize) -> usize {
    let mid = d / r;
    fc(d, mid) + bn(mid) + fc(mid, d) + bn(d)
}

/// Learnable-scalar count of a configuration, by closed-form accumulation.
#[must_use]
pub fn closed_form_param_count(config: &ModelConfig) -> usize {
    let mut total = fc(3, config.embed_dim) + bn(config.embed_dim);
    for spec in &config.stages {
        if spec.affine_enabled {
            total += 2 * spec.d_in;
        }
        total += fc(spec.d_in, spec.d_out);
        total += (spec.pre_repeats + spec.pos_repeats) * block(spec.d_out, config.bottleneck_r);
    }
    let [h1, h2] = config.head_dims;
    total += fc(config.last_width(), h1) + bn(h1);
    total += fc(h1, h2) + bn(h2);
    total += fc(h2, config.num_classes);
    total
}
