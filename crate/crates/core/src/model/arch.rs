use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{check_chain, LayerSpec};

/// Layer chain of an auto-encoder plus the bookkeeping that explains any
/// layers added to make the mirrored decoder shape-check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: String,
    pub features: usize,
    pub window: usize,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    /// Trim and projection records, one line each.
    pub notes: Vec<String>,
}

impl Architecture {
    /// Look up a named architecture (`skab` or `industrial`).
    pub fn from_name(name: &str, features: usize, window: usize) -> Result<Self> {
        match name {
            "skab" => Ok(Self::skab(features, window)),
            "industrial" => Ok(Self::industrial(features, window)),
            other => Err(Error::Config(format!(
                "unknown architecture '{other}' (expected skab, industrial or a custom chain)"
            ))),
        }
    }

    /// Two strided convolutions (64, 32 filters, kernel 5, stride 2,
    /// padding 2), a dense latent of 8 units, and the mirrored decoder.
    pub fn skab(features: usize, window: usize) -> Self {
        Self::skab_scaled(features, window, [64, 32], 8)
    }

    /// The SKAB layout with configurable widths.
    ///
    /// The decoder opens with a dense layer of `features * L2` units
    /// (128 for 8 features and a 64-step window) reshaped to
    /// `[features, L2]`, where `L2` is the encoder's final length. Each
    /// transposed convolution (padding 1) overshoots by one step and is
    /// followed by a trim back to the matching encoder length.
    pub fn skab_scaled(features: usize, window: usize, filters: [usize; 2], latent: usize) -> Self {
        let (k, s, p) = (5, 2, 2);
        let len1 = conv_len(window, k, s, p);
        let len2 = conv_len(len1, k, s, p);
        let encoder = vec![
            LayerSpec::conv1d(features, filters[0], k, s, p),
            LayerSpec::relu(),
            LayerSpec::conv1d(filters[0], filters[1], k, s, p),
            LayerSpec::relu(),
            LayerSpec::Flatten,
            LayerSpec::dense(filters[1] * len2, latent),
        ];
        let mut notes = Vec::new();
        let mut decoder = vec![
            LayerSpec::dense(latent, features * len2),
            LayerSpec::relu(),
            LayerSpec::Reshape {
                channels: features,
                length: len2,
            },
            LayerSpec::conv1d_transpose(features, filters[1], k, s, 1),
        ];
        push_trim(&mut decoder, &mut notes, transpose_len(len2, k, s, 1), len1);
        decoder.push(LayerSpec::relu());
        decoder.push(LayerSpec::conv1d_transpose(filters[1], features, k, s, 1));
        push_trim(&mut decoder, &mut notes, transpose_len(len1, k, s, 1), window);
        Architecture {
            name: "skab".into(),
            features,
            window,
            encoder,
            decoder,
            notes,
        }
    }

    /// Two stride-1 convolutions (32, 64 filters, kernel 5, padding 1), a
    /// dense chain 64-32-16-8 and the mirrored decoder.
    pub fn industrial(features: usize, window: usize) -> Self {
        Self::industrial_scaled(features, window, [32, 64], &[64, 32, 16, 8], [64, 32])
    }

    /// The industrial layout with configurable widths.
    ///
    /// Decoder: dense layers over the reversed encoder chain without its
    /// widest and latent entries (16, 32 by default), a dense bridge to the
    /// encoder's final conv volume, two transposed convolutions, and a
    /// kernel-1 projection back to `features` channels.
    pub fn industrial_scaled(
        features: usize,
        window: usize,
        conv: [usize; 2],
        dense: &[usize],
        deconv: [usize; 2],
    ) -> Self {
        let (k, s, p) = (5, 1, 1);
        let len1 = conv_len(window, k, s, p);
        let len2 = conv_len(len1, k, s, p);
        let mut encoder = vec![
            LayerSpec::conv1d(features, conv[0], k, s, p),
            LayerSpec::relu(),
            LayerSpec::conv1d(conv[0], conv[1], k, s, p),
            LayerSpec::relu(),
            LayerSpec::Flatten,
        ];
        let mut width = conv[1] * len2;
        for (i, &units) in dense.iter().enumerate() {
            encoder.push(LayerSpec::dense(width, units));
            if i + 1 < dense.len() {
                encoder.push(LayerSpec::relu());
            }
            width = units;
        }
        let mut decoder = Vec::new();
        let inner = if dense.len() > 2 {
            &dense[1..dense.len() - 1]
        } else {
            &[][..]
        };
        for &units in inner.iter().rev() {
            decoder.push(LayerSpec::dense(width, units));
            decoder.push(LayerSpec::relu());
            width = units;
        }
        let mut notes = vec![format!(
            "dense bridge {width} -> {}x{len2} feeds the transposed convolutions",
            conv[1]
        )];
        decoder.push(LayerSpec::dense(width, conv[1] * len2));
        decoder.push(LayerSpec::relu());
        decoder.push(LayerSpec::Reshape {
            channels: conv[1],
            length: len2,
        });
        decoder.push(LayerSpec::conv1d_transpose(conv[1], deconv[0], k, s, p));
        push_trim(&mut decoder, &mut notes, transpose_len(len2, k, s, p), len1);
        decoder.push(LayerSpec::relu());
        decoder.push(LayerSpec::conv1d_transpose(deconv[0], deconv[1], k, s, p));
        push_trim(&mut decoder, &mut notes, transpose_len(len1, k, s, p), window);
        decoder.push(LayerSpec::relu());
        decoder.push(LayerSpec::conv1d(deconv[1], features, 1, 1, 0));
        notes.push(format!(
            "output projection conv1d {} -> {features} (kernel 1)",
            deconv[1]
        ));
        Architecture {
            name: "industrial".into(),
            features,
            window,
            encoder,
            decoder,
            notes,
        }
    }

    pub fn custom(
        name: &str,
        features: usize,
        window: usize,
        encoder: Vec<LayerSpec>,
        decoder: Vec<LayerSpec>,
    ) -> Self {
        Architecture {
            name: name.into(),
            features,
            window,
            encoder,
            decoder,
            notes: Vec::new(),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.encoder.iter().chain(&self.decoder)
    }

    pub fn len(&self) -> usize {
        self.encoder.len() + self.decoder.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Type-check the whole chain; the output must match the input shape
    /// and the latent code must be smaller than the window.
    pub fn check(&self) -> Result<Vec<Vec<usize>>> {
        let specs: Vec<LayerSpec> = self.layers().copied().collect();
        let input = [self.features, self.window];
        let shapes = check_chain(&specs, &input)?;
        let out = shapes.last().expect("non-empty");
        if out.as_slice() != input {
            return Err(Error::shape("decoder output", &input, out));
        }
        let latent: usize = shapes[self.encoder.len()].iter().product();
        if latent >= self.features * self.window {
            return Err(Error::Config(format!(
                "latent size {latent} does not compress the {}x{} window",
                self.features, self.window
            )));
        }
        Ok(shapes)
    }
}

fn conv_len(len: usize, k: usize, s: usize, p: usize) -> usize {
    (len + 2 * p).saturating_sub(k) / s + 1
}

fn transpose_len(len: usize, k: usize, s: usize, p: usize) -> usize {
    ((len - 1) * s + k).saturating_sub(2 * p)
}

fn push_trim(decoder: &mut Vec<LayerSpec>, notes: &mut Vec<String>, have: usize, want: usize) {
    if have != want {
        notes.push(format!("trim after layer {}: {have} -> {want} steps", decoder.len() - 1));
        decoder.push(LayerSpec::Trim { length: want });
    }
}
