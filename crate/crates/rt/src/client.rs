//! Blocking client for the tick service; used by the CLI replay command and
//! the loopback tests. One request, one reply, strictly in order.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};

use ankle_msk::TrialRecording;

use crate::error::{Result, RtError};
use crate::protocol::{self, Reply, TickRequest, TickResponse};

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    model_hash: String,
}

impl Client {
    /// Connects and completes the handshake at the given rate.
    pub fn connect(addr: impl ToSocketAddrs, rate_hz: f64) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        let mut client = Self {
            reader: BufReader::new(stream),
            writer,
            model_hash: String::new(),
        };
        client.send_raw(&protocol::hello_line(rate_hz))?;
        client.model_hash = protocol::parse_ok(&client.read_line()?)?;
        Ok(client)
    }

    /// Hash of the model document the server is running.
    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    /// Sends one raw line. Exposed so tests can exercise the server's
    /// handling of malformed input.
    pub fn send_raw(&mut self, line: &str) -> Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        Ok(())
    }

    fn read_line(&mut self) -> Result<String> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(RtError::Closed);
        }
        Ok(line.trim_end().to_owned())
    }

    /// Reads one reply line, tick or error.
    pub fn recv(&mut self) -> Result<Reply> {
        let line = self.read_line()?;
        serde_json::from_str(&line)
            .map_err(|e| RtError::Protocol(format!("unparseable reply {line:?}: {e}")))
    }

    /// One full round trip. A server-side error line becomes `Err`.
    pub fn tick(&mut self, req: &TickRequest) -> Result<TickResponse> {
        self.send_raw(&req.to_line())?;
        match self.recv()? {
            Reply::Tick(resp) => Ok(resp),
            Reply::Error(e) => Err(RtError::Server { code: e.error, msg: e.msg }),
        }
    }

    /// Streams a recorded trial sample by sample.
    pub fn stream_trial(&mut self, trial: &TrialRecording) -> Result<Vec<TickResponse>> {
        let mut out = Vec::with_capacity(trial.len());
        for i in 0..trial.len() {
            out.push(self.tick(&TickRequest {
                t: trial.time[i],
                emg_ta: trial.emg_ta[i],
                emg_gas: trial.emg_gas[i],
                theta: trial.ankle_angle[i],
            })?);
        }
        Ok(out)
    }
}
