use super::{Checkpoint, XavierSpec};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Path of the only layer whose shape depends on the band count.
pub const FIRST_CONV: &str = "conv1.weight";

fn first_conv(ckpt: &Checkpoint) -> Result<(&Tensor<f32>, [usize; 4])> {
    let w = ckpt.get(FIRST_CONV)?;
    let s: [usize; 4] = w.shape().try_into().map_err(|_| {
        Error::Shape(format!("{FIRST_CONV} must be [F, C, kh, kw], got {:?}", w.shape()))
    })?;
    Ok((w, s))
}

fn check_slots(slots: &[usize; 3], channels: usize) -> Result<()> {
    for (i, &s) in slots.iter().enumerate() {
        if s >= channels {
            return Err(Error::InvalidArgument(format!(
                "RGB slot {s} is out of range for {channels} channels"
            )));
        }
        if slots[..i].contains(&s) {
            return Err(Error::InvalidArgument(format!("RGB slot {s} is assigned twice")));
        }
    }
    Ok(())
}

/// Widens a 3-channel first convolution to `target` input channels.
///
/// Pretrained channel `j` lands in band slot `rgb_slots[j]`; every other slot
/// is drawn from Xavier uniform with fan-in and fan-out of the widened filter.
/// Filter count, stride and padding are unchanged, as is every other entry.
pub fn extend_input_channels(
    ckpt: &Checkpoint,
    target: usize,
    rgb_slots: [usize; 3],
    rng: &mut RngState,
) -> Result<Checkpoint> {
    let (w, [f, c, kh, kw]) = first_conv(ckpt)?;
    if c != 3 {
        return Err(Error::InvalidArgument(format!(
            "channel extension needs a 3-channel first convolution, found {c}"
        )));
    }
    if target < 3 {
        return Err(Error::InvalidArgument(format!(
            "target channel count {target} is below 3"
        )));
    }
    check_slots(&rgb_slots, target)?;
    if target == 3 && rgb_slots == [0, 1, 2] {
        return Ok(ckpt.clone());
    }

    let plane = kh * kw;
    let xavier = XavierSpec::conv(f, target, kh, kw);
    let src = w.data();
    let mut out = vec![0.0f32; f * target * plane];
    for filter in 0..f {
        for slot in 0..target {
            let dst = &mut out[(filter * target + slot) * plane..][..plane];
            match rgb_slots.iter().position(|&s| s == slot) {
                Some(j) => dst.copy_from_slice(&src[(filter * 3 + j) * plane..][..plane]),
                None => dst.iter_mut().for_each(|v| *v = xavier.sample(rng) as f32),
            }
        }
    }

    let mut next = ckpt.clone();
    next.entries[FIRST_CONV] = Tensor::new(vec![f, target, kh, kw], out)?;
    next.metadata.insert("input_channels".into(), target.to_string());
    next.metadata.insert(
        "rgb_slots".into(),
        rgb_slots.map(|s| s.to_string()).join(","),
    );
    Ok(next)
}

/// Inverse projection: keeps only the first-conv slices at `slots`, in order.
pub fn select_input_channels(ckpt: &Checkpoint, slots: [usize; 3]) -> Result<Checkpoint> {
    let (w, [f, c, kh, kw]) = first_conv(ckpt)?;
    check_slots(&slots, c)?;
    let plane = kh * kw;
    let src = w.data();
    let mut out = Vec::with_capacity(f * 3 * plane);
    for filter in 0..f {
        for &slot in &slots {
            out.extend_from_slice(&src[(filter * c + slot) * plane..][..plane]);
        }
    }
    let mut next = ckpt.clone();
    next.entries[FIRST_CONV] = Tensor::new(vec![f, 3, kh, kw], out)?;
    next.metadata.insert("input_channels".into(), "3".into());
    next.metadata.remove("rgb_slots");
    Ok(next)
}

/// Parses a `"a,b,c"` slot list.
pub fn parse_slots(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad RGB slot list {s:?}")))?;
    parts
        .try_into()
        .map_err(|_| Error::InvalidArgument(format!("RGB slot list {s:?} needs three entries")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Model, NetworkConfig, Variant};

    fn base() -> Checkpoint {
        let cfg = NetworkConfig::new(Variant::Micro, 3, 2);
        Model::<f32>::build(cfg, &mut RngState::new(5)).unwrap().to_checkpoint()
    }

    #[test]
    fn identity_extension() {
        let c = base();
        let e = extend_input_channels(&c, 3, [0, 1, 2], &mut RngState::new(1)).unwrap();
        assert_eq!(e.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn slot_errors() {
        let c = base();
        let mut rng = RngState::new(1);
        assert!(extend_input_channels(&c, 6, [0, 0, 1], &mut rng).is_err());
        assert!(extend_input_channels(&c, 6, [0, 1, 6], &mut rng).is_err());
        assert!(extend_input_channels(&c, 2, [0, 1, 2], &mut rng).is_err());
        let wide = extend_input_channels(&c, 6, [2, 1, 0], &mut rng).unwrap();
        assert!(extend_input_channels(&wide, 9, [0, 1, 2], &mut rng).is_err());
    }

    #[test]
    fn permuted_slots_copy_and_project_back() {
        let c = base();
        let e = extend_input_channels(&c, 6, [2, 1, 0], &mut RngState::new(9)).unwrap();
        let w0 = c.entries[FIRST_CONV].data();
        let w1 = e.entries[FIRST_CONV].data();
        // filter 0, pretrained channel 0 (red) sits in band slot 2
        assert_eq!(&w1[2 * 9..3 * 9], &w0[..9]);
        assert_eq!(e.metadata["input_channels"], "6");
        let back = select_input_channels(&e, [2, 1, 0]).unwrap();
        assert_eq!(back.entries[FIRST_CONV], c.entries[FIRST_CONV]);
        for (k, v) in &c.entries {
            if k != FIRST_CONV {
                assert_eq!(&back.entries[k], v);
            }
        }
    }

    #[test]
    fn parses_slot_lists() {
        assert_eq!(parse_slots("2, 1,0").unwrap(), [2, 1, 0]);
        assert!(parse_slots("1,2").is_err());
        assert!(parse_slots("a,b,c").is_err());
    }
}
