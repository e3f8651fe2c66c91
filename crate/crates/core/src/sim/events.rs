use std::io::Write;

use serde::Serialize;

use super::vehicle::VehicleClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Spawn,
    LcStart,
    LcDone,
    Detector,
    Exit,
    /// Held at the entry, or stopped at a lane end.
    Wait,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub t_s: f64,
    pub vehicle_id: u64,
    pub class: VehicleClass,
    pub event: EventKind,
    pub link: u8,
    pub lane: u8,
    /// Link-relative position.
    pub position_ft: f64,
    pub speed_ftps: f64,
}

/// Writes `t_s,vehicle_id,class,event,link,lane,position_ft,speed_ftps`.
pub fn write_events_csv<W: Write>(events: &[Event], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for e in events {
        wr.serialize(e)?;
    }
    wr.flush()?;
    Ok(())
}
