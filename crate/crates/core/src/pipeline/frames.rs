use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::check_keys;
use crate::error::{Error, Result};

const FRAME_KEYS: [&str; 2] = ["t", "objects"];
const OBJECT_KEYS: [&str; 9] = ["id", "x", "y", "w", "l", "angle", "class", "speed", "acc"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Pedestrian,
    Bicycle,
    Scooter,
    Car,
    Other,
}

impl ObjectClass {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pedestrian" => Self::Pedestrian,
            "bicycle" => Self::Bicycle,
            "scooter" => Self::Scooter,
            "car" => Self::Car,
            "other" => Self::Other,
            _ => return None,
        })
    }
}

/// One tracked detection. Positions are in meters relative to the sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFrameObject {
    pub id: String,
    pub x: f64,
    pub y: f64,
    #[serde(rename = "w")]
    pub width: f64,
    #[serde(rename = "l")]
    pub length: f64,
    pub angle: f64,
    pub class: ObjectClass,
    pub speed: f64,
    #[serde(rename = "acc")]
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFrame {
    #[serde(rename = "t")]
    pub timestamp: f64,
    pub objects: Vec<RawFrameObject>,
}

fn number(obj: &Map<String, Value>, key: &str, loc: &str) -> Result<f64> {
    obj[key]
        .as_f64()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::format(loc, format!("`{key}` must be a finite number")))
}

fn parse_object(v: &Value, loc: &str) -> Result<RawFrameObject> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::format(loc, "frame object must be a JSON object"))?;
    check_keys(obj, &OBJECT_KEYS, loc)?;
    let id = obj["id"]
        .as_str()
        .ok_or_else(|| Error::format(loc, "`id` must be a string"))?
        .to_owned();
    let class_name = obj["class"]
        .as_str()
        .ok_or_else(|| Error::format(loc, "`class` must be a string"))?;
    let class = ObjectClass::parse(class_name)
        .ok_or_else(|| Error::format(loc, format!("unknown class `{class_name}`")))?;
    let speed = number(obj, "speed", loc)?;
    if speed < 0.0 {
        return Err(Error::format(loc, format!("negative speed {speed}")));
    }
    let accuracy = number(obj, "acc", loc)?;
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(Error::format(loc, format!("accuracy {accuracy} outside [0, 1]")));
    }
    Ok(RawFrameObject {
        id,
        x: number(obj, "x", loc)?,
        y: number(obj, "y", loc)?,
        width: number(obj, "w", loc)?,
        length: number(obj, "l", loc)?,
        angle: number(obj, "angle", loc)?,
        class,
        speed,
        accuracy,
    })
}

fn parse_frame(line: &str, loc: &str) -> Result<RawFrame> {
    let v: Value =
        serde_json::from_str(line).map_err(|e| Error::format(loc, format!("invalid JSON: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::format(loc, "frame must be a JSON object"))?;
    check_keys(obj, &FRAME_KEYS, loc)?;
    let timestamp = number(obj, "t", loc)?;
    let objects = obj["objects"]
        .as_array()
        .ok_or_else(|| Error::format(loc, "`objects` must be an array"))?
        .iter()
        .enumerate()
        .map(|(j, o)| parse_object(o, &format!("{loc}, object {j}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(RawFrame { timestamp, objects })
}

/// Reads one frame per line. Every malformed line is reported, not just the
/// first; timestamps must strictly increase.
pub fn parse_frames<R: BufRead>(reader: R) -> Result<Vec<RawFrame>> {
    let mut frames: Vec<RawFrame> = Vec::new();
    let mut last_line = 0usize;
    let mut problems: Vec<(String, String)> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("line {}", n + 1);
        match parse_frame(&line, &loc) {
            Ok(frame) => {
                if let Some(prev) = frames.last() {
                    if frame.timestamp <= prev.timestamp {
                        problems.push((
                            loc,
                            format!(
                                "timestamp {} does not follow frame at line {} (t={})",
                                frame.timestamp, last_line, prev.timestamp
                            ),
                        ));
                        continue;
                    }
                }
                last_line = n + 1;
                frames.push(frame);
            }
            Err(Error::Format { location, reason }) => problems.push((location, reason)),
            Err(e) => return Err(e),
        }
    }
    match problems.split_first() {
        None => Ok(frames),
        Some(((location, reason), rest)) => {
            let mut reason = reason.clone();
            for (l, r) in rest {
                reason.push_str(&format!("; {l}: {r}"));
            }
            Err(Error::format(location.clone(), reason))
        }
    }
}

pub fn write_frames<W: Write>(mut w: W, frames: &[RawFrame]) -> Result<()> {
    for f in frames {
        serde_json::to_writer(&mut w, f).map_err(std::io::Error::other)?;
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PED: &str = r#"{"id":"a","x":1.0,"y":2.0,"w":0.5,"l":0.4,"angle":0.1,"class":"pedestrian","speed":1.2,"acc":0.9}"#;

    #[test]
    fn empty_stream() {
        assert!(parse_frames("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn single_pedestrian_echoes_schema() {
        let line = format!(r#"{{"t":0.5,"objects":[{PED}]}}"#);
        let frames = parse_frames(line.as_bytes()).unwrap();
        assert_eq!(frames.len(), 1);
        let o = &frames[0].objects[0];
        assert_eq!(
            o,
            &RawFrameObject {
                id: "a".into(),
                x: 1.0,
                y: 2.0,
                width: 0.5,
                length: 0.4,
                angle: 0.1,
                class: ObjectClass::Pedestrian,
                speed: 1.2,
                accuracy: 0.9,
            }
        );
        let mut buf = Vec::new();
        write_frames(&mut buf, &frames).unwrap();
        assert_eq!(parse_frames(buf.as_slice()).unwrap(), frames);
    }

    #[test]
    fn out_of_order_timestamps_name_both_frames() {
        let text = "{\"t\":1.0,\"objects\":[]}\n{\"t\":0.5,\"objects\":[]}\n";
        match parse_frames(text.as_bytes()) {
            Err(Error::Format { location, reason }) => {
                assert_eq!(location, "line 2");
                assert!(reason.contains("line 1"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_listed() {
        let text = r#"{"t":1.0,"objects":[],"foo":1,"bar":2}"#;
        match parse_frames(text.as_bytes()) {
            Err(Error::Format { reason, .. }) => {
                assert!(reason.contains("bar") && reason.contains("foo"), "{reason}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn collects_every_bad_line() {
        let bad_acc = PED.replace("0.9", "1.5");
        let text = format!(
            "not json\n{{\"t\":1.0,\"objects\":[{bad_acc}]}}\n{{\"t\":2.0,\"objects\":[]}}\n"
        );
        match parse_frames(text.as_bytes()) {
            Err(Error::Format { location, reason }) => {
                assert_eq!(location, "line 1");
                assert!(reason.contains("line 2, object 0"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
