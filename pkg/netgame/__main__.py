from netgame.main import app

app(prog_name="netgame")
