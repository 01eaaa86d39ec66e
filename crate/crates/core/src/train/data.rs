use std::fs;
use std::path::Path;

use rand::Rng;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::signal::{load_wav, mel_spectrogram, AudioClip, MelSpectrogram, SAMPLE_RATE};
use crate::tensor::Tensor;

/// Every `.wav` file directly inside `dir`, in file-name order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<AudioClip>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::from(e).at_path(dir))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no .wav files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let clip = load_wav(p)?;
            if clip.sample_rate() != SAMPLE_RATE {
                return Err(Error::Format(format!(
                    "sample rate {} Hz, expected {SAMPLE_RATE} Hz",
                    clip.sample_rate()
                ))
                .at_path(p));
            }
            Ok(clip)
        })
        .collect()
}

/// A training batch and where each item came from.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, clip_len]`
    pub audio: Tensor<f32>,
    /// `[B, 80, frames]`, computed over exactly the clip windows.
    pub mel: Tensor<f32>,
    /// `(clip index, offset)` per item.
    pub sources: Vec<(usize, usize)>,
    /// Items whose source was shorter than `clip_len` and got zero-padded.
    pub padded: Vec<bool>,
}

/// Draw `cfg.batch` windows of `cfg.clip_len` samples: a uniformly random
/// clip, then a uniformly random offset inside it.
pub fn sample_clips<R: Rng + ?Sized>(dataset: &[AudioClip], cfg: &TrainConfig, rng: &mut R) -> Result<Batch> {
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let len = cfg.clip_len;
    let mut audio = Vec::with_capacity(cfg.batch * len);
    let mut mels: Vec<MelSpectrogram> = Vec::with_capacity(cfg.batch);
    let mut sources = Vec::with_capacity(cfg.batch);
    let mut padded = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let index = rng.random_range(0..dataset.len());
        let clip = dataset[index].samples();
        let (offset, window, short) = if clip.len() >= len {
            let offset = rng.random_range(0..=clip.len() - len);
            (offset, clip[offset..offset + len].to_vec(), false)
        } else {
            log::warn!("clip {index} has {} samples, zero-padding to {len}", clip.len());
            let mut w = clip.to_vec();
            w.resize(len, 0.0);
            (0, w, true)
        };
        mels.push(mel_spectrogram(&AudioClip::mono(window.clone())?)?);
        audio.extend_from_slice(&window);
        sources.push((index, offset));
        padded.push(short);
    }
    Ok(Batch {
        audio: Tensor::new(&[cfg.batch, len], audio)?,
        mel: MelSpectrogram::batch(&mels)?,
        sources,
        padded,
    })
}
