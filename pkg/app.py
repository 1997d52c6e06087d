from dotenv import load_dotenv

from src.cli.app import app


load_dotenv()


if __name__ == "__main__":
    app()
