//! HTTP transport for the static-map service.

use std::io::Read;
use std::time::Duration;

use treecnn::data::tiles::{TileClient, TransportError};

const MAX_TILE_BYTES: u64 = 20 << 20;

pub struct HttpTileClient {
    agent: ureq::Agent,
}

impl HttpTileClient {
    pub fn new() -> Self {
        HttpTileClient { agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build() }
    }
}

impl TileClient for HttpTileClient {
    fn get(&self, url: &str) -> Result<Vec<u8>, TransportError> {
        match self.agent.get(url).call() {
            Ok(response) => {
                let mut body = Vec::new();
                response
                    .into_reader()
                    .take(MAX_TILE_BYTES)
                    .read_to_end(&mut body)
                    .map_err(|e| TransportError::Network(e.kind().to_string()))?;
                Ok(body)
            }
            Err(ureq::Error::Status(code, _)) => Err(TransportError::Status(code)),
            // The transport message may echo the URL, which carries the key.
            Err(ureq::Error::Transport(t)) => Err(TransportError::Network(t.kind().to_string())),
        }
    }
}
