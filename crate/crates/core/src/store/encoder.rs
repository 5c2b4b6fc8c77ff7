//! Adapters for external image and text encoders.
//!
//! Two transports are supported:
//! * subprocess: one request per stdin line (an image path or a prompt),
//!   one response per stdout line of comma-separated floats;
//! * HTTP: `POST` of the raw image bytes (or UTF-8 prompt), response is a
//!   JSON array of numbers.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use image::Rgba;

use super::image::{load_image, pad_to_square, WHITE};
use super::uieb::EmbeddingBlock;
use crate::error::{Error, Result};

pub trait Encoder: Send {
    fn encode_image(&mut self, path: &Path) -> Result<Vec<f32>>;
    fn encode_text(&mut self, text: &str) -> Result<Vec<f32>>;
}

impl<E: Encoder + ?Sized> Encoder for Box<E> {
    fn encode_image(&mut self, path: &Path) -> Result<Vec<f32>> {
        (**self).encode_image(path)
    }

    fn encode_text(&mut self, text: &str) -> Result<Vec<f32>> {
        (**self).encode_text(text)
    }
}

pub fn parse_float_line(line: &str) -> Result<Vec<f32>> {
    line.trim()
        .split(',')
        .map(|tok| {
            tok.trim().parse::<f32>().map_err(|e| {
                Error::EncoderUnavailable(format!("malformed encoder output `{tok}`: {e}"))
            })
        })
        .collect()
}

/// Long-lived child process speaking the line protocol.
pub struct SubprocessEncoder {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl SubprocessEncoder {
    /// Spawns `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::EncoderUnavailable(format!("cannot spawn `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout piped"));
        Ok(Self {
            child,
            stdin,
            stdout,
        })
    }

    fn request(&mut self, line: &str) -> Result<Vec<f32>> {
        if line.contains('\n') {
            return Err(Error::InvalidArgument(
                "encoder request must be a single line".into(),
            ));
        }
        let unavailable = |e: std::io::Error| Error::EncoderUnavailable(e.to_string());
        writeln!(self.stdin, "{line}").map_err(unavailable)?;
        self.stdin.flush().map_err(unavailable)?;
        let mut reply = String::new();
        let read = self.stdout.read_line(&mut reply).map_err(unavailable)?;
        if read == 0 {
            return Err(Error::EncoderUnavailable(
                "encoder process closed its output".into(),
            ));
        }
        parse_float_line(&reply)
    }
}

impl Drop for SubprocessEncoder {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Encoder for SubprocessEncoder {
    fn encode_image(&mut self, path: &Path) -> Result<Vec<f32>> {
        self.request(&path.to_string_lossy())
    }

    fn encode_text(&mut self, text: &str) -> Result<Vec<f32>> {
        self.request(text)
    }
}

pub struct HttpEncoder {
    url: String,
}

impl HttpEncoder {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into() }
    }

    fn post(&self, content_type: &str, body: &[u8]) -> Result<Vec<f32>> {
        let unavailable = |e: ureq::Error| Error::EncoderUnavailable(format!("{}: {e}", self.url));
        let mut response = ureq::post(&self.url)
            .header("Content-Type", content_type)
            .send(body)
            .map_err(unavailable)?;
        let text = response.body_mut().read_to_string().map_err(unavailable)?;
        let values: Vec<f64> = serde_json::from_str(&text).map_err(|e| {
            Error::EncoderUnavailable(format!(
                "{}: response is not a JSON number array: {e}",
                self.url
            ))
        })?;
        Ok(values.into_iter().map(|v| v as f32).collect())
    }
}

impl Encoder for HttpEncoder {
    fn encode_image(&mut self, path: &Path) -> Result<Vec<f32>> {
        let bytes = std::fs::read(path)?;
        self.post("application/octet-stream", &bytes)
    }

    fn encode_text(&mut self, text: &str) -> Result<Vec<f32>> {
        self.post("text/plain; charset=utf-8", text.as_bytes())
    }
}

/// `http://` / `https://` URLs select the HTTP transport; anything else is
/// run as a subprocess command.
pub fn connect(endpoint: &str) -> Result<Box<dyn Encoder>> {
    if endpoint.starts_with("http://") || endpoint.starts_with("https://") {
        Ok(Box::new(HttpEncoder::new(endpoint)))
    } else {
        Ok(Box::new(SubprocessEncoder::spawn(endpoint)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preprocess {
    pub pad_square: bool,
    pub fill: Rgba<u8>,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            pad_square: false,
            fill: WHITE,
        }
    }
}

pub(crate) fn check_shape(values: Vec<f32>, dim: usize) -> Result<Vec<f32>> {
    if values.len() != dim {
        return Err(Error::EncoderShapeMismatch {
            expected: dim,
            got: values.len(),
        });
    }
    Ok(values)
}

/// Encodes `images` in order into an `n x dim` block.
pub fn encode_images<E: Encoder + ?Sized>(
    images: &[PathBuf],
    encoder: &mut E,
    dim: usize,
    preprocess: Preprocess,
) -> Result<EmbeddingBlock> {
    let scratch = if preprocess.pad_square {
        Some(tempfile::tempdir()?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(images.len());
    for (k, path) in images.iter().enumerate() {
        let values = match &scratch {
            Some(dir) => {
                let padded = pad_to_square(&load_image(path)?.to_rgba8(), preprocess.fill)?;
                let tmp = dir.path().join(format!("{k}.png"));
                padded
                    .save(&tmp)
                    .map_err(|e| Error::UnsupportedImageFormat(e.to_string()))?;
                encoder.encode_image(&tmp)?
            }
            None => encoder.encode_image(path)?,
        };
        rows.push(check_shape(values, dim)?);
    }
    EmbeddingBlock::from_rows(dim, &rows)
}
