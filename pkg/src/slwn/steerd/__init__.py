"""Collector service and steering front door: byte protocol, TCP server,
WebSocket gateway, and the scripted client."""
