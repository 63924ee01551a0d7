// SPDX-License-Identifier: Apache-2.0

//! Line-based control of a running node, used over stdin by the scenario runner.
//!
//! Commands: `dial ADDR`, `close PEER`, `shutdown`. Each gets one reply line:
//! `ok dial PEER`, `ok close PEER`, `ok shutdown` or `err MESSAGE`.

use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncWrite, AsyncWriteExt};

use super::NodeHandle;

/// Serves commands until `shutdown` or end of input. Returns true if a
/// shutdown was requested.
pub async fn serve<R, W>(node: &NodeHandle, input: R, mut output: W) -> std::io::Result<bool>
where
    R: AsyncBufRead + Unpin,
    W: AsyncWrite + Unpin,
{
    let mut lines = input.lines();
    while let Some(line) = lines.next_line().await? {
        let mut words = line.split_whitespace();
        let reply = match (words.next(), words.next()) {
            (None, _) => continue,
            (Some("dial"), Some(addr)) => match node.dial(addr).await {
                Ok(peer) => format!("ok dial {peer}"),
                Err(e) => format!("err {e}"),
            },
            (Some("close"), Some(peer)) => match node.close_link(peer).await {
                Ok(true) => format!("ok close {peer}"),
                Ok(false) => format!("err no link to {peer}"),
                Err(e) => format!("err {e}"),
            },
            (Some("shutdown"), None) => {
                output.write_all(b"ok shutdown\n").await?;
                output.flush().await?;
                return Ok(true);
            }
            _ => format!("err unknown command {line:?}"),
        };
        output.write_all(reply.as_bytes()).await?;
        output.write_all(b"\n").await?;
        output.flush().await?;
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpa::{start, NodeConfig};

    #[tokio::test]
    async fn dial_close_shutdown() {
        let a = start(NodeConfig::ephemeral("A")).await.unwrap();
        let b = start(NodeConfig::ephemeral("B")).await.unwrap();
        let script = format!("dial {}\nclose B\nclose B\nbogus\n\nshutdown\nnever\n", b.cla_addr);
        let mut out = Vec::new();
        assert!(serve(&a, script.as_bytes(), &mut out).await.unwrap());
        let out = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "ok dial B");
        assert_eq!(lines[1], "ok close B");
        assert!(lines[2].starts_with("err"));
        assert!(lines[3].starts_with("err unknown"));
        assert_eq!(lines[4], "ok shutdown");
        assert_eq!(lines.len(), 5);
    }
}
